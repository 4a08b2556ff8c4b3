// Acceptance gate: one PASS/FAIL line per primary criterion, exit status 1 if any fails.
//
//   acceptance                 run criteria 1-9 with the pinned configuration
//   acceptance --only 6,7,8    run a subset
//   acceptance --workdir DIR   keep generated corpora, runs and reports in DIR

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include <CLI11.hpp>
#include <boost/beast/core/detail/base64.hpp>
#include <httplib.h>
#include <json.hpp>

#include "freeview/datasets.hpp"
#include "freeview/image_io.hpp"
#include "freeview/metrics.hpp"
#include "freeview/pilot.hpp"
#include "freeview/retrieval.hpp"
#include "freeview/service.hpp"
#include "freeview/training.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace freeview;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---- 1. Loss oracles -------------------------------------------------------------------

Outcome loss_oracles() {
  const auto start = Clock::now();
  std::mt19937_64 rng(101);
  std::mt19937_64 init(102);
  Decoder<double> dec(testsupport::tiny_config(16, 4), init);
  std::uniform_int_distribution<std::size_t> batch_size(2, 8), group_size(1, 6);
  std::uniform_real_distribution<double> margin(0.0, 2.0);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = batch_size(rng);
    std::vector<EmbeddingPair> e;
    for (std::size_t i = 0; i < n; ++i) e.push_back(testsupport::random_pair(rng, 4));
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<TripletIndex> t;
    for (std::size_t i = 0; i < n; ++i) t.push_back({pick(rng), pick(rng), pick(rng)});
    std::vector<std::vector<std::size_t>> groups;
    for (std::size_t next = 0; next < n;) {
      std::vector<std::size_t> g;
      for (std::size_t m = std::min(group_size(rng), n - next); m > 0; --m) g.push_back(next++);
      groups.push_back(g);
    }
    if (std::none_of(groups.begin(), groups.end(), [](const auto& g) { return g.size() >= 2; })) groups = {{0, 1}};
    std::vector<IndexPair> matched;
    for (std::size_t i = 0; i + 1 < n; i += 2) matched.push_back({i, i + 1});
    Tensor<double> targets(static_cast<int>(n), 3, 16, 16);
    targets.data = testsupport::random_vector(rng, targets.size(), 0.5);
    const double mu = margin(rng);
    VrOptions opts;
    opts.training = false;

    const auto diff = [&](double a, double b) { worst = std::max(worst, std::abs(a - b)); };
    diff(loss_tri_va(e, t, mu), oracle::tri_va(e, t, mu));
    diff(loss_tri_vs(e, t, mu), oracle::tri_vs(e, t, mu));
    diff(loss_ic_exact(e, groups), oracle::ic_groups(e, groups));
    diff(loss_vc(e, matched), oracle::vc(e, matched));
    diff(loss_vr_exact(dec, e, groups, targets, opts), oracle::vr_groups(dec, e, groups, targets));
  }
  const double secs = seconds_since(start);
  return {worst <= 1e-6 && secs < 10.0, fmt("100 batches, max |lib - oracle| = %.2e (tol 1e-6), %.2f s (limit 10 s)", worst, secs)};
}

// ---- 2. Gradient checks ----------------------------------------------------------------

Outcome gradient_checks() {
  const auto start = Clock::now();
  const double h = 1e-4;
  std::mt19937_64 rng(201);
  std::mt19937_64 init(202);
  Decoder<double> dec(testsupport::tiny_config(16, 4), init);
  std::map<std::string, double> worst;
  std::map<std::string, int> points;
  const std::vector<TripletIndex> t{{0, 1, 2}, {3, 4, 5}, {1, 3, 5}};
  const std::vector<IndexPair> pairs{{0, 1}, {2, 3}, {4, 5}, {1, 4}};
  const std::vector<IndexPair> matched{{0, 1}, {2, 3}, {4, 5}};
  const double mu = 1.0;
  using Loss = std::function<double(const std::vector<EmbeddingPair>&, GradSink*)>;
  Tensor<double> targets(6, 3, 16, 16);
  targets.data = testsupport::random_vector(rng, targets.size(), 0.5);
  const std::vector<std::pair<std::string, Loss>> losses{
      {"VA", [&](const auto& x, GradSink* s) { return loss_tri_va(x, t, mu, s); }},
      {"VS", [&](const auto& x, GradSink* s) { return loss_tri_vs(x, t, mu, s); }},
      {"IC", [&](const auto& x, GradSink* s) { return loss_ic(x, pairs, s); }},
      {"VC", [&](const auto& x, GradSink* s) { return loss_vc(x, matched, s); }},
      {"VR", [&](const auto& x, GradSink* s) { return loss_vr(dec, x, pairs, targets, VrOptions{}, s); }},
  };
  for (const auto& [name, loss] : losses) {
    int attempts = 0;
    while (points[name] < 20 && attempts++ < 1000) {
      std::vector<EmbeddingPair> e;
      for (int i = 0; i < 6; ++i) e.push_back(testsupport::random_pair(rng, 4));
      // Distance kinks at zero and hinge kinks at the margin boundary.
      bool kink = false;
      for (const auto& x : t) {
        const double dp = oracle::dist(e[x.s].content, e[x.p].content), dn = oracle::dist(e[x.s].content, e[x.n].content);
        const auto s = oracle::plus(e[x.s].content, e[x.s].view);
        const double vp = oracle::dist(s, oracle::plus(e[x.p].content, e[x.p].view));
        const double vn = oracle::dist(s, oracle::plus(e[x.n].content, e[x.n].view));
        kink |= std::abs(mu + dp - dn) < 1e-2 || std::abs(mu + vp - vn) < 1e-2 || std::min({dp, dn, vp, vn}) < 1e-3;
      }
      for (const auto& p : pairs)
        kink |= oracle::dist(e[p.a].content, e[p.b].content) < 1e-3 || oracle::dist(e[p.a].view, e[p.b].view) < 1e-3;
      const auto value = [&](const std::vector<EmbeddingPair>& x) { return loss(x, nullptr); };
      // ReLU kinks inside the decoder.
      if (kink || (name == "VR" && oracle::near_kink(e, value, h))) continue;
      auto grads = zero_grads_like(e);
      GradSink sink{grads, 1.0};
      loss(e, &sink);
      worst[name] = std::max(worst[name], oracle::relative_error(grads, oracle::numeric_gradient(e, value, h)));
      ++points[name];
    }
  }
  const double secs = seconds_since(start);
  bool pass = secs < 30.0;
  std::string detail;
  for (const auto& [name, _] : losses) {
    pass &= points[name] == 20 && worst[name] < 1e-4;
    detail += fmt("%s %d pts max rel %.1e; ", name.c_str(), points[name], worst[name]);
  }
  return {pass, detail + fmt("step 1e-4, tol 1e-4, %.2f s (limit 30 s)", secs)};
}

// ---- 3. Metric oracles -----------------------------------------------------------------

Outcome metric_oracles() {
  const auto start = Clock::now();
  std::mt19937_64 rng(301);
  std::vector<ItemRef> gallery;
  for (std::uint32_t i = 0; i < 12; ++i)
    for (int v : {0, 30, 75, 105, 135, 180, 225, 270, 315}) gallery.push_back({i, Modality::photo, ViewAngle::degrees(v), Split::test});
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    auto ranking = gallery;
    std::shuffle(ranking.begin(), ranking.end(), rng);
    const ItemRef q{static_cast<std::uint32_t>(rng() % 12), Modality::sketch, ViewAngle::degrees(30 * static_cast<int>(rng() % 2)), Split::test};
    for (auto mode : {RetrievalMode::view_agnostic, RetrievalMode::view_specific}) {
      const auto rel = relevant_set(q, gallery, mode);
      worst = std::max(worst, std::abs(average_precision(ranking, rel) - oracle::average_precision(ranking, rel)));
      for (int k : {1, 10, 100})
        worst = std::max(worst, std::abs(precision_at_k(ranking, rel, k) - oracle::precision_at_k(ranking, rel, k)));
    }
    RankedResult r{q, RetrievalMode::view_specific, {}};
    for (std::size_t i = 0; i < ranking.size(); ++i) r.ranking.push_back({ranking[i], static_cast<double>(i), i});
    const std::vector<RankedResult> results{r};
    for (int k : {1, 5, 10}) worst = std::max(worst, std::abs(acc_at_q(results, k) - oracle::acc_at_q(results, k)));
  }
  double worst_closed = 0;
  for (int r = 1; r <= 10; ++r) {
    std::vector<ItemRef> ranking(gallery.begin() + 9, gallery.end());
    ranking.insert(ranking.begin() + (r - 1), gallery[0]);
    worst_closed = std::max(worst_closed, std::abs(average_precision(ranking, {gallery[0]}) - 1.0 / r));
  }
  const double secs = seconds_since(start);
  return {worst <= 1e-9 && worst_closed <= 1e-9 && secs < 5.0,
          fmt("50 rankings max diff %.1e, AP = 1/r for r = 1..10 max diff %.1e (tol 1e-9), %.2f s (limit 5 s)", worst,
              worst_closed, secs)};
}

// ---- 4. Objective composition ----------------------------------------------------------

Outcome composition() {
  LossConfig cfg;
  const double total = loss_total(LossTerms{1, 1, 1, 1, 1}, cfg).total;
  LossConfig zero = cfg;
  zero.lambda1 = zero.lambda2 = 0;
  std::mt19937_64 rng(401);
  bool reduces = true;
  for (int i = 0; i < 20; ++i) {
    std::uniform_real_distribution<double> u(0, 5);
    const LossTerms terms{u(rng), u(rng), u(rng), u(rng), u(rng)};
    reduces &= loss_total(terms, zero).total == terms.va;
  }
  return {std::abs(total - 3.6) <= 1e-12 && cfg.lambda1 == 0.5 && cfg.lambda2 == 0.7 && reduces,
          fmt("all terms 1 -> total %.15g (want 3.6, tol 1e-12); lambda1 = lambda2 = 0 reduces to the content triplet: %s", total,
              reduces ? "yes" : "no")};
}

// ---- 5. Mode switch --------------------------------------------------------------------

Outcome mode_switch() {
  auto index = std::make_shared<GalleryIndex>(2);
  index->append({1, Modality::photo, ViewAngle::degrees(0), Split::test}, EmbeddingPair{{0.1, 0.0}, {5.0, 0.0}});
  index->append({2, Modality::photo, ViewAngle::degrees(0), Split::test}, EmbeddingPair{{0.3, 0.0}, {0.0, 0.0}});
  index->freeze();
  auto encoder = std::make_shared<testsupport::FixedEncoder>(EmbeddingPair{{0.0, 0.0}, {0.0, 0.0}}, 16);

  const ImageSample sketch(ItemRef{0, Modality::sketch, ViewAngle::degrees(0), Split::test}, 16);
  const auto lib_va = query(*index, *encoder, sketch, RetrievalMode::view_agnostic, 1).ranking.at(0).ref.instance_id;
  const auto lib_vs = query(*index, *encoder, sketch, RetrievalMode::view_specific, 1).ranking.at(0).ref.instance_id;

  RetrievalService service;
  service.load(encoder, index);
  HttpServer server(service);
  const int port = server.start("127.0.0.1", 0);
  httplib::Client client("127.0.0.1", port);
  const auto png = encode_png(RgbImage{16, 16, std::vector<std::uint8_t>(16 * 16 * 3, 255)});
  std::string b64(boost::beast::detail::base64::encoded_size(png.size()), '\0');
  b64.resize(boost::beast::detail::base64::encode(b64.data(), png.data(), png.size()));
  const auto post = [&](const char* mode) -> long long {
    const auto res = client.Post("/retrieve", nlohmann::json{{"image", b64}, {"mode", mode}, {"k", 1}}.dump(), "application/json");
    if (!res || res->status != 200) return -1;
    return nlohmann::json::parse(res->body)["results"][0]["instance_id"].get<long long>();
  };
  const long long http_va = post("view_agnostic");
  const long long http_vs = post("view_specific");
  server.stop();
  return {lib_va == 1 && lib_vs == 2 && http_va == 1 && http_vs == 2,
          fmt("library VA -> %u, VS -> %u; POST /retrieve VA -> %lld, VS -> %lld (want A = 1, B = 2)", lib_va, lib_vs,
              http_va, http_vs)};
}

// ---- 6-8. Toy end-to-end ---------------------------------------------------------------

struct ToyConfig {
  int seeds = 3;
  int epochs = 30;
  int batch = 16;
  double lr = 1e-3;
  std::string vr_norm = "frobenius";
  int steps_per_epoch = 30;
  std::string negative_view = "any";
  int chance_trials = 10000;
};

TrainConfig train_config(const ToyConfig& tc, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = tc.epochs;
  cfg.batch_size = tc.batch;
  cfg.lr = tc.lr;
  cfg.steps_per_epoch = tc.steps_per_epoch;
  cfg.loss.vr_norm = tc.vr_norm == "rms" ? VrNorm::root_mean_square : VrNorm::frobenius;
  cfg.match_negative_view = tc.negative_view == "matched";
  cfg.seed = seed;
  cfg.checkpoint_every = 0;
  return cfg;
}

struct SeedResults {
  double chance = 0;
  double full_va_map = 0, full_vs_acc1_fvs = 0, full_vs_acc1_fc = 0;
  double full_drop = 0, base_drop = 0;
  double strip_vs_acc1 = 0, strip_va_map = 0;
  double full_train_secs = 0;
};

std::map<std::string, SeedResults> toy_cache;

SeedResults run_seed(const ToyConfig& tc, std::uint64_t seed, const fs::path& work) {
  const auto dir = work / ("seed" + std::to_string(seed));
  CorpusConfig cc;
  cc.seed = seed;
  const auto corpora = build_corpora(cc, dir / "data");
  const auto test = load_images(corpora.d2d, Split::test);
  SeedResults r;

  std::vector<ItemRef> queries, gallery;
  for (const auto& img : test) (img.ref.modality == Modality::photo ? gallery : queries).push_back(img.ref);
  r.chance = chance_map(queries, gallery, RetrievalMode::view_agnostic, tc.chance_trials, derive_seed(seed, 77)).mean;

  const auto train_run = [&](const std::string& name, const TrainConfig& cfg) {
    EncoderConfig ec;
    ec.init_seed = seed;
    auto model = std::make_unique<ModelState>(ec);
    const auto t0 = Clock::now();
    train(*model, corpora.dcm, corpora.d2d, cfg, dir / "runs" / name);
    const double secs = seconds_since(t0);
    std::printf("    seed %llu %-9s trained in %.0f s\n", static_cast<unsigned long long>(seed), name.c_str(), secs);
    std::fflush(stdout);
    return std::pair{std::move(model), secs};
  };
  const TrainConfig full_cfg = train_config(tc, seed);
  auto [full, full_secs] = train_run("full", full_cfg);
  r.full_train_secs = full_secs;
  TrainConfig base_cfg = full_cfg;
  base_cfg.loss = LossConfig::pilot_baseline();
  base_cfg.loss.vr_norm = full_cfg.loss.vr_norm;
  auto base = train_run("baseline", base_cfg).first;
  auto strip_vs = train_run("strip-VS", ablate(full_cfg, LossTerm::VS)).first;
  auto strip_va = train_run("strip-VA", ablate(full_cfg, LossTerm::VA)).first;

  ModelEncoder full_enc(*full), base_enc(*base), svs_enc(*strip_vs), sva_enc(*strip_va);
  const auto full_va = evaluate(full_enc, test, RetrievalMode::view_agnostic);
  const auto full_vs = evaluate(full_enc, test, RetrievalMode::view_specific);
  r.full_va_map = full_va.mAP_at_all;
  r.full_vs_acc1_fvs = full_vs.acc_at.at(1);
  // The view-agnostic report ranks with f_c; its exact-view Acc@1 is the f_c-only score.
  r.full_vs_acc1_fc = full_va.acc_at.at(1);
  const auto pilot = run_pilot(base_enc, full_enc, test, cc.sketch_views);
  r.base_drop = pilot.first.drop;
  r.full_drop = pilot.second.drop;
  r.strip_vs_acc1 = evaluate(svs_enc, test, RetrievalMode::view_specific).acc_at.at(1);
  r.strip_va_map = evaluate(sva_enc, test, RetrievalMode::view_agnostic).mAP_at_all;

  std::ofstream(dir / "summary.json") << nlohmann::ordered_json{{"seed", seed},
                                                               {"chance_va_map", r.chance},
                                                               {"full_va_map", r.full_va_map},
                                                               {"full_vs_acc1_fvs", r.full_vs_acc1_fvs},
                                                               {"full_vs_acc1_fc", r.full_vs_acc1_fc},
                                                               {"pilot", nlohmann::ordered_json::parse(to_json(pilot))},
                                                               {"strip_vs_vs_acc1", r.strip_vs_acc1},
                                                               {"strip_va_va_map", r.strip_va_map},
                                                               {"full_train_seconds", r.full_train_secs}}
                                                                .dump(2)
                                       << "\n";
  std::printf("    seed %llu: chance %.4f | full VA mAP %.4f, VS Acc@1 f_vs %.4f f_c %.4f | drop base %.4f full %.4f | "
              "strip-VS VS Acc@1 %.4f | strip-VA VA mAP %.4f\n",
              static_cast<unsigned long long>(seed), r.chance, r.full_va_map, r.full_vs_acc1_fvs, r.full_vs_acc1_fc,
              r.base_drop, r.full_drop, r.strip_vs_acc1, r.strip_va_map);
  std::fflush(stdout);
  return r;
}

std::vector<SeedResults> toy_results(const ToyConfig& tc, const fs::path& work) {
  static std::vector<SeedResults> cached;
  if (cached.empty())
    for (int s = 0; s < tc.seeds; ++s) cached.push_back(run_seed(tc, static_cast<std::uint64_t>(s), work));
  return cached;
}

Outcome toy_end_to_end(const ToyConfig& tc, const fs::path& work) {
  const auto rs = toy_results(tc, work);
  int map_ok = 0, fvs_wins = 0;
  double slowest = 0;
  std::string detail;
  for (std::size_t s = 0; s < rs.size(); ++s) {
    const auto& r = rs[s];
    map_ok += r.full_va_map >= 3 * r.chance;
    fvs_wins += r.full_vs_acc1_fvs > r.full_vs_acc1_fc;
    slowest = std::max(slowest, r.full_train_secs);
    detail += fmt("seed %zu mAP %.3f vs 3x chance %.3f, Acc@1 f_vs %.3f vs f_c %.3f; ", s, r.full_va_map, 3 * r.chance,
                  r.full_vs_acc1_fvs, r.full_vs_acc1_fc);
  }
  const int n = static_cast<int>(rs.size());
  const bool pass = map_ok == n && 2 * fvs_wins > n && slowest <= 900.0;
  return {pass, detail + fmt("mAP ok %d/%d (all required), f_vs wins %d/%d (majority), slowest training %.0f s (limit 900 s)",
                             map_ok, n, fvs_wins, n, slowest)};
}

Outcome pilot_direction(const ToyConfig& tc, const fs::path& work) {
  const auto rs = toy_results(tc, work);
  int wins = 0;
  std::string detail;
  for (std::size_t s = 0; s < rs.size(); ++s) {
    wins += rs[s].base_drop > rs[s].full_drop;
    detail += fmt("seed %zu drop baseline %.3f vs full %.3f; ", s, rs[s].base_drop, rs[s].full_drop);
  }
  return {wins >= 2, detail + fmt("baseline drops more in %d/%zu (need >= 2)", wins, rs.size())};
}

Outcome ablation_direction(const ToyConfig& tc, const fs::path& work) {
  const auto rs = toy_results(tc, work);
  int vs_wins = 0, va_wins = 0;
  std::string detail;
  for (std::size_t s = 0; s < rs.size(); ++s) {
    vs_wins += rs[s].strip_vs_acc1 < rs[s].full_vs_acc1_fvs;
    va_wins += rs[s].strip_va_map < rs[s].full_va_map;
    detail += fmt("seed %zu VS Acc@1 strip %.3f vs full %.3f, VA mAP strip %.3f vs full %.3f; ", s, rs[s].strip_vs_acc1,
                  rs[s].full_vs_acc1_fvs, rs[s].strip_va_map, rs[s].full_va_map);
  }
  return {vs_wins >= 2 && va_wins >= 2,
          detail + fmt("strip-VS lowers VS Acc@1 in %d/%zu, strip-VA lowers VA mAP in %d/%zu (need >= 2 each)", vs_wins,
                       rs.size(), va_wins, rs.size())};
}

// ---- 9. Determinism --------------------------------------------------------------------

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(FREEVIEW_CLI_PATH) + " " + args + " >>" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

Outcome determinism(const ToyConfig& tc, const fs::path& work) {
  const auto start = Clock::now();
  const std::string train_flags =
      fmt(" --epochs 2 --lr %g --vr-norm %s --steps-per-epoch %d --batch %d%s", tc.lr, tc.vr_norm.c_str(),
          tc.steps_per_epoch, tc.batch, tc.negative_view == "matched" ? " --match-negative-view" : "");
  std::vector<fs::path> roots;
  for (const char* name : {"det_a", "det_b"}) {
    const auto root = work / name;
    fs::remove_all(root);
    fs::create_directories(root);
    const std::string out = " --out " + root.string() + " --seed 5";
    const auto log = root / "cli.log";
    for (const std::string& cmd : {"gen-data" + out, "train" + out + train_flags, "index" + out, "eval" + out + " --mode va",
                                   "eval" + out + " --mode vs"})
      if (run_cli(cmd, log) != 0) return {false, "command failed: freeview " + cmd};
    roots.push_back(root);
  }
  std::size_t compared = 0;
  std::vector<std::string> differing;
  std::map<std::string, int> kinds;
  for (const auto& e : fs::recursive_directory_iterator(roots[0])) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), roots[0]);
    const auto ext = rel.extension().string();
    // .ini flag snapshots and the console log record the output directory.
    if (ext == ".ini" || ext == ".log") continue;
    ++compared;
    const std::string first = rel.begin()->string();
    ++kinds[first];
    if (slurp(e.path()) != slurp(roots[1] / rel)) differing.push_back(rel.string());
  }
  std::string kinds_text;
  for (const auto& [k, n] : kinds) kinds_text += fmt("%s %d, ", k.c_str(), n);
  const bool has_all = kinds.count("data") && kinds.count("runs") && kinds.count("index") && kinds.count("reports");
  return {differing.empty() && has_all,
          fmt("%zu files compared (%s), %zu differ%s; %.0f s", compared, kinds_text.c_str(), differing.size(),
              differing.empty() ? "" : (" e.g. " + differing.front()).c_str(), seconds_since(start))};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"freeview acceptance gate"};
  std::string only;
  std::string workdir;
  ToyConfig tc;
  app.add_option("--only", only, "Comma-separated criteria to run (default: all)");
  app.add_option("--workdir", workdir, "Keep artifacts here instead of a temporary directory");
  app.add_option("--seeds", tc.seeds, "Seeds for criteria 6-8")->capture_default_str();
  app.add_option("--lr", tc.lr)->capture_default_str();
  app.add_option("--vr-norm", tc.vr_norm)->check(CLI::IsMember({"rms", "frobenius"}))->capture_default_str();
  app.add_option("--steps-per-epoch", tc.steps_per_epoch)->capture_default_str();
  app.add_option("--batch", tc.batch)->capture_default_str();
  app.add_option("--negative-view", tc.negative_view, "Triplet negatives at the anchor's view or any view")
      ->check(CLI::IsMember({"matched", "any"}))
      ->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  std::set<int> selected;
  if (only.empty())
    for (int i = 1; i <= 9; ++i) selected.insert(i);
  else {
    std::stringstream ss(only);
    std::string item;
    while (std::getline(ss, item, ',')) selected.insert(std::stoi(item));
  }

  std::unique_ptr<testsupport::TempDir> temp;
  fs::path work;
  if (workdir.empty()) {
    temp = std::make_unique<testsupport::TempDir>("acceptance");
    work = temp->path();
  } else {
    work = fs::absolute(workdir);
    fs::create_directories(work);
  }

  const std::vector<std::pair<int, std::pair<const char*, std::function<Outcome()>>>> criteria{
      {1, {"loss oracles", loss_oracles}},
      {2, {"gradient checks", gradient_checks}},
      {3, {"metric oracles", metric_oracles}},
      {4, {"objective composition", composition}},
      {5, {"mode switch", mode_switch}},
      {6, {"toy end-to-end", [&] { return toy_end_to_end(tc, work); }}},
      {7, {"pilot direction", [&] { return pilot_direction(tc, work); }}},
      {8, {"ablation direction", [&] { return ablation_direction(tc, work); }}},
      {9, {"determinism", [&] { return determinism(tc, work); }}},
  };
  int failed = 0;
  for (const auto& [id, entry] : criteria) {
    if (!selected.count(id)) continue;
    Outcome o;
    try {
      o = entry.second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("[%s] %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, entry.first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
