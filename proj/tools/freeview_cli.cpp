// freeview: data generation, training, indexing, evaluation, pilot study and serving.
//
// Layout under --out: data/ (manifests + PNGs), runs/<name>/ (training runs),
// index/ (gallery index), reports/ (evaluation and pilot JSON).

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "freeview/datasets.hpp"
#include "freeview/image_io.hpp"
#include "freeview/metrics.hpp"
#include "freeview/pilot.hpp"
#include "freeview/retrieval.hpp"
#include "freeview/service.hpp"
#include "freeview/training.hpp"

namespace fs = std::filesystem;
using namespace freeview;

namespace {

/// Bad input files, flags or paths: exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::atomic<bool> g_stop{false};

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("not an integer list: " + text);
    }
  }
  if (out.empty()) throw UsageError("empty integer list");
  return out;
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw UsageError(what + " not found: " + p.string());
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw UsageError("cannot create directory " + p.string());
  const fs::path probe = p / ".write_probe";
  {
    std::ofstream f(probe);
    if (!f) throw UsageError("directory is not writable: " + p.string());
  }
  fs::remove(probe, ec);
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text;
}

/// Flags of the subcommand, as an INI snapshot next to its outputs.
void snapshot(const CLI::App* sub, const fs::path& dir) {
  write_text(dir / (sub->get_name() + ".ini"), sub->config_to_str(true, false));
}

struct Common {
  std::string out = "out";
  std::uint64_t seed = 0;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--out", c.out, "Output root (data/, runs/, index/, reports/)")->capture_default_str();
  sub->add_option("--seed", c.seed, "Random seed")->capture_default_str();
}

std::vector<ImageSample> test_images(const DatasetManifest& d2d) { return load_images(d2d, Split::test); }

DatasetManifest load_d2d(const fs::path& data) {
  require_file(data / "d2d.json", "D_2D manifest");
  try {
    return load_manifest(data / "d2d.json");
  } catch (const ManifestError& e) {
    throw UsageError(e.what());
  }
}

std::unique_ptr<ModelState> load_model(const fs::path& ckpt) {
  require_file(ckpt, "checkpoint");
  return load_checkpoint(ckpt);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"freeview: view-aware fine-grained sketch-based image retrieval"};
  app.require_subcommand(1);

  // gen-data
  Common gen_common;
  CorpusConfig corpus;
  std::string views = "0,30,75,105,135,180,225,270,315", sketch_views = "0,30,75";
  auto* gen = app.add_subcommand("gen-data", "Render the synthetic D_CM and D_2D corpora");
  add_common(gen, gen_common);
  gen->add_option("--instances", corpus.n_train, "Training instances")->capture_default_str();
  gen->add_option("--test-instances", corpus.n_test, "Test instances")->capture_default_str();
  gen->add_option("--views", views, "View grid, comma-separated degrees")->capture_default_str();
  gen->add_option("--sketch-views", sketch_views, "Sketch views, a subset of --views")->capture_default_str();
  gen->add_option("--img-size", corpus.img_size, "Image side in pixels")->capture_default_str();
  gen->add_option("--jitter", corpus.jitter_px, "Sketch stroke jitter (pixels)")->capture_default_str();
  gen->add_option("--dropout", corpus.dropout_frac, "Fraction of sketch segments dropped")->capture_default_str();

  // train
  Common train_common;
  TrainConfig tcfg;
  EncoderConfig ecfg;
  std::string data_dir, run_name, profile = "desk", widths = "32,64,128,128", backbone = "small_conv";
  std::vector<std::string> strips;
  bool baseline = false, no_augment = false, symmetric_vr = false;
  std::string vr_norm = "frobenius";
  auto* tr = app.add_subcommand("train", "Train the encoder and decoder");
  add_common(tr, train_common);
  tr->add_option("--data", data_dir, "Dataset directory (default <out>/data)");
  tr->add_option("--profile", profile, "Defaults profile: desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}))
      ->capture_default_str();
  auto* epochs_opt = tr->add_option("--epochs", tcfg.epochs, "Epochs")->capture_default_str();
  auto* batch_opt = tr->add_option("--batch", tcfg.batch_size, "Triplets per step")->capture_default_str();
  auto* lr_opt = tr->add_option("--lr", tcfg.lr, "Adam learning rate")->capture_default_str();
  tr->add_option("--strip", strips, "Disable loss terms (VA, VS, VC, IC, VR)");
  tr->add_flag("--baseline", baseline, "Content triplet only with margin mu_base (pilot baseline)");
  tr->add_option("--pairs-per-instance", tcfg.pairs_per_instance, "View pairs per D_2D instance")->capture_default_str();
  tr->add_option("--view-instances", tcfg.view_instances, "D_2D instances per step (0: batch / pairs)")
      ->capture_default_str();
  tr->add_option("--steps-per-epoch", tcfg.steps_per_epoch, "Steps per epoch (0: one pass over D_CM)")
      ->capture_default_str();
  tr->add_option("--checkpoint-every", tcfg.checkpoint_every, "Checkpoint period in epochs")->capture_default_str();
  tr->add_flag("--no-augment", no_augment, "Disable colour augmentation");
  tr->add_flag("--match-negative-view", tcfg.match_negative_view, "Take each triplet negative at the anchor's view");
  tr->add_option("--vr-norm", vr_norm, "Reconstruction norm: frobenius or rms (per-pixel)")
      ->check(CLI::IsMember({"frobenius", "rms"}))
      ->capture_default_str();
  tr->add_flag("--symmetric-vr", symmetric_vr, "Also reconstruct with the pair roles swapped");
  tr->add_option("--embed-dim", ecfg.embed_dim, "Embedding dimension d")->capture_default_str();
  tr->add_option("--widths", widths, "Trunk widths, comma-separated")->capture_default_str();
  tr->add_option("--backbone", backbone, "small_conv or vgg16_scratch")
      ->check(CLI::IsMember({"small_conv", "vgg16_scratch"}))
      ->capture_default_str();
  tr->add_option("--name", run_name, "Run name under <out>/runs (default derived from toggles)");

  // index
  Common index_common;
  std::string index_ckpt, index_data;
  auto* idx = app.add_subcommand("index", "Encode the test gallery into an index file");
  add_common(idx, index_common);
  idx->add_option("--ckpt", index_ckpt, "Checkpoint (default <out>/runs/full/final.bin)");
  idx->add_option("--data", index_data, "Dataset directory (default <out>/data)");

  // eval
  Common eval_common;
  std::string eval_ckpt, eval_data, eval_mode = "va";
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  add_common(ev, eval_common);
  ev->add_option("--ckpt", eval_ckpt, "Checkpoint (default <out>/runs/full/final.bin)");
  ev->add_option("--data", eval_data, "Dataset directory (default <out>/data)");
  ev->add_option("--mode", eval_mode, "va or vs")->check(CLI::IsMember({"va", "vs"}))->capture_default_str();

  // pilot
  Common pilot_common;
  std::string pilot_baseline, pilot_ckpt, pilot_data;
  auto* pi = app.add_subcommand("pilot", "Existing vs pilot gallery study");
  add_common(pi, pilot_common);
  pi->add_option("--baseline-ckpt", pilot_baseline, "Baseline checkpoint (default <out>/runs/baseline/final.bin)");
  pi->add_option("--ckpt", pilot_ckpt, "View-aware checkpoint (default <out>/runs/full/final.bin)");
  pi->add_option("--data", pilot_data, "Dataset directory (default <out>/data)");

  // serve
  Common serve_common;
  std::string host = "127.0.0.1", serve_ckpt, serve_index, serve_manifest;
  int port = 8787;
  auto* sv = app.add_subcommand("serve", "HTTP retrieval service");
  add_common(sv, serve_common);
  sv->add_option("--host", host, "Listen address")->capture_default_str();
  sv->add_option("--port", port, "Listen port")->capture_default_str();
  sv->add_option("--ckpt", serve_ckpt, "Checkpoint (default <out>/runs/full/final.bin)");
  sv->add_option("--index", serve_index, "Index file (default <out>/index/gallery.idx)");
  sv->add_option("--manifest", serve_manifest, "D_2D manifest locating gallery images (default: index sidecar paths)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      corpus.view_grid = parse_int_list(views);
      corpus.sketch_views = parse_int_list(sketch_views);
      corpus.seed = gen_common.seed;
      const fs::path data = fs::path(gen_common.out) / "data";
      ensure_dir(data);
      try {
        corpus.validate();
      } catch (const ConfigError& e) {
        throw UsageError(e.what());
      }
      const auto c = build_corpora(corpus, data);
      snapshot(gen, data);
      std::printf("wrote %zu D_CM instances and %zu D_2D instances to %s\n", c.dcm.instances.size(),
                  c.d2d.instances.size(), data.string().c_str());
      return 0;
    }

    if (tr->parsed()) {
      if (profile == "paper") {
        const TrainConfig paper = TrainConfig::paper_profile();
        if (!epochs_opt->count()) tcfg.epochs = paper.epochs;
        if (!batch_opt->count()) tcfg.batch_size = paper.batch_size;
        if (!lr_opt->count()) tcfg.lr = paper.lr;
      }
      tcfg.seed = train_common.seed;
      tcfg.augment = !no_augment;
      if (baseline) tcfg.loss = LossConfig::pilot_baseline();
      tcfg.loss.vr_norm = vr_norm == "rms" ? VrNorm::root_mean_square : VrNorm::frobenius;
      tcfg.loss.symmetric_vr = symmetric_vr;
      for (const auto& s : strips) {
        try {
          tcfg = ablate(tcfg, s);
        } catch (const std::invalid_argument& e) {
          throw UsageError("unknown loss term: " + s);
        }
      }
      if (tcfg.loss.toggles.empty()) throw UsageError("every loss term is stripped");
      try {
        tcfg.validate();
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      const fs::path data = data_dir.empty() ? fs::path(train_common.out) / "data" : fs::path(data_dir);
      require_file(data / "dcm.json", "D_CM manifest");
      require_file(data / "d2d.json", "D_2D manifest");
      DatasetManifest dcm, d2d;
      try {
        dcm = load_manifest(data / "dcm.json");
        d2d = load_manifest(data / "d2d.json");
      } catch (const ManifestError& e) {
        throw UsageError(e.what());
      }
      ecfg.img_size = dcm.img_size;
      ecfg.conv_widths = parse_int_list(widths);
      ecfg.backbone = parse_backbone(backbone);
      ecfg.init_seed = train_common.seed;
      try {
        ecfg.validate();
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      if (run_name.empty()) {
        if (baseline) run_name = "baseline";
        else if (strips.empty()) run_name = "full";
        else {
          run_name = "strip";
          for (const auto& s : strips) run_name += "-" + std::string(to_string(parse_loss_term(s)));
        }
      }
      const fs::path run = fs::path(train_common.out) / "runs" / run_name;
      ensure_dir(run);
      snapshot(tr, run);
      ModelState model(ecfg);
      TrainHooks hooks;
      hooks.on_step = [&](std::int64_t step, int epoch, const LossReport& r) {
        std::printf("epoch %3d step %6lld  total %.5f\n", epoch, static_cast<long long>(step), r.total);
        std::fflush(stdout);
      };
      const auto result = train(model, dcm, d2d, tcfg, run, hooks);
      save_checkpoint(model, run / "final.bin");
      std::printf("trained %lld steps; checkpoint %s\n", static_cast<long long>(result.steps),
                  (run / "final.bin").string().c_str());
      return 0;
    }

    if (idx->parsed()) {
      const fs::path out = index_common.out;
      const fs::path ckpt = index_ckpt.empty() ? out / "runs" / "full" / "final.bin" : fs::path(index_ckpt);
      const fs::path data = index_data.empty() ? out / "data" : fs::path(index_data);
      const auto d2d = load_d2d(data);
      auto model = load_model(ckpt);
      const fs::path dir = out / "index";
      ensure_dir(dir);
      std::vector<ImageSample> photos;
      std::vector<std::string> paths;
      for (const auto& inst : d2d.instances) {
        if (inst.split != Split::test) continue;
        for (const auto& f : inst.files)
          if (f.modality == Modality::photo)
            paths.push_back(fs::absolute(d2d.root / f.path).lexically_relative(fs::absolute(dir)).generic_string());
      }
      for (auto& img : test_images(d2d))
        if (img.ref.modality == Modality::photo) photos.push_back(std::move(img));
      ModelEncoder encoder(*model);
      const auto index = build_index(encoder, photos);
      save_index(index, dir / "gallery.idx", paths);
      snapshot(idx, dir);
      std::printf("indexed %zu photos (d=%zu) into %s\n", index.size(), index.dim(), (dir / "gallery.idx").string().c_str());
      return 0;
    }

    if (ev->parsed()) {
      const fs::path out = eval_common.out;
      const fs::path ckpt = eval_ckpt.empty() ? out / "runs" / "full" / "final.bin" : fs::path(eval_ckpt);
      const fs::path data = eval_data.empty() ? out / "data" : fs::path(eval_data);
      const auto d2d = load_d2d(data);
      auto model = load_model(ckpt);
      const RetrievalMode mode = parse_mode(eval_mode);
      ModelEncoder encoder(*model);
      const auto report = evaluate(encoder, test_images(d2d), mode);
      const fs::path dir = out / "reports";
      ensure_dir(dir);
      write_text(dir / ("eval_" + eval_mode + ".json"), to_json(report));
      snapshot(ev, dir);
      std::printf("%-10s %s\n%-10s %zu\n%-10s %zu\n", "mode", std::string(to_string(mode)).c_str(), "queries",
                  report.queries, "gallery", report.gallery_size);
      if (mode == RetrievalMode::view_agnostic)
        std::printf("%-10s %.4f\n%-10s %.4f\n", "mAP@all", report.mAP_at_all, "P@100", report.P_at_100);
      else
        std::printf("%-10s %.4f\n%-10s %.4f\n", "Acc@1", report.acc_at.at(1), "Acc@10", report.acc_at.at(10));
      return 0;
    }

    if (pi->parsed()) {
      const fs::path out = pilot_common.out;
      const fs::path base = pilot_baseline.empty() ? out / "runs" / "baseline" / "final.bin" : fs::path(pilot_baseline);
      const fs::path full = pilot_ckpt.empty() ? out / "runs" / "full" / "final.bin" : fs::path(pilot_ckpt);
      const fs::path data = pilot_data.empty() ? out / "data" : fs::path(pilot_data);
      const auto d2d = load_d2d(data);
      auto base_model = load_model(base);
      auto full_model = load_model(full);
      ModelEncoder base_enc(*base_model), full_enc(*full_model);
      const auto reports = run_pilot(base_enc, full_enc, test_images(d2d), d2d.sketch_views);
      const fs::path dir = out / "reports";
      ensure_dir(dir);
      write_text(dir / "pilot.json", to_json(reports));
      snapshot(pi, dir);
      std::printf("%-10s %10s %10s %10s\n", "model", "existing", "pilot", "drop");
      for (const auto* r : {&reports.first, &reports.second})
        std::printf("%-10s %10.4f %10.4f %10.4f\n", r->model_name.c_str(), r->acc1_existing, r->acc1_pilot, r->drop);
      std::cout << to_json(reports);
      return 0;
    }

    if (sv->parsed()) {
      const fs::path out = serve_common.out;
      const fs::path ckpt = serve_ckpt.empty() ? out / "runs" / "full" / "final.bin" : fs::path(serve_ckpt);
      const fs::path index_path = serve_index.empty() ? out / "index" / "gallery.idx" : fs::path(serve_index);
      require_file(ckpt, "checkpoint");
      require_file(index_path, "index");
      RetrievalService service;
      HttpServer server(service);
      const int bound = server.start(host, port);
      std::printf("listening on http://%s:%d (loading)\n", host.c_str(), bound);
      std::fflush(stdout);

      std::shared_ptr<ModelState> model = load_checkpoint(ckpt);
      auto index = std::make_shared<GalleryIndex>(load_index(index_path));
      std::vector<fs::path> paths = load_index_image_paths(index_path);
      if (!serve_manifest.empty()) {
        require_file(serve_manifest, "manifest");
        const auto m = load_manifest(serve_manifest);
        for (std::size_t i = 0; i < index->size(); ++i) {
          const auto& ref = (*index)[i].ref;
          paths[i].clear();
          for (const auto& inst : m.instances)
            if (inst.instance_id == ref.instance_id)
              for (const auto& f : inst.files)
                if (f.modality == Modality::photo && f.view_deg == ref.view.raw()) paths[i] = m.root / f.path;
        }
      }
      service.load(std::shared_ptr<const ImageEncoder>(std::make_shared<ModelEncoder>(*model)), index, paths);
      std::printf("ready: %zu gallery photos, d=%zu, model step %lld\n", index->size(), index->dim(),
                  static_cast<long long>(model->step));
      std::fflush(stdout);
      std::signal(SIGINT, [](int) { g_stop = true; });
      std::signal(SIGTERM, [](int) { g_stop = true; });
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      server.stop();
      return 0;
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
