// xray: train, evaluate, explain and serve chest-film models.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "xray/bundle.hpp"
#include "xray/explain.hpp"
#include "xray/pipeline.hpp"
#include "xray/robustness.hpp"
#include "xray/service.hpp"
#include "xray/train.hpp"

namespace fs = std::filesystem;
using namespace xray;

namespace {

constexpr int exit_runtime = 1;
constexpr int exit_usage = 2;

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) fail(ErrorCode::InvalidConfig, "cannot write " + path);
}

void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::InvalidConfig, "cannot write " + path.string());
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::InvalidConfig, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

DatasetManifest load_dataset(const std::string& path) {
  try {
    return DatasetManifest::from_json(nlohmann::json::parse(read_text(path)));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidConfig, "dataset " + path + ": " + e.what());
  }
}

ModelBundle load_bundle_dir(const std::string& path) {
  if (path.empty()) fail(ErrorCode::InvalidConfig, "no bundle given (--bundle or XRAY_BUNDLE)");
  return read_bundle(path);
}

LabeledSet subset(const DatasetManifest& d, const DatasetSplit& s, const std::string& which) {
  if (which == "train") return materialize(d, s.train);
  if (which == "val") return materialize(d, s.val);
  if (which == "test") return materialize(d, s.test);
  if (which == "all") {
    std::vector<std::size_t> all(d.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return materialize(d, all);
  }
  fail(ErrorCode::InvalidConfig, "split must be train, val, test or all");
}

std::vector<AugmentationPolicy> parse_levels(const std::string& text) {
  std::vector<AugmentationPolicy> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(AugmentationPolicy::scaled(std::stod(tok)));
    } catch (const std::logic_error&) {
      fail(ErrorCode::InvalidConfig, "bad augmentation level '" + tok + "'");
    }
    out.back().validate();
  }
  if (out.empty()) fail(ErrorCode::InvalidConfig, "no augmentation levels");
  return out;
}

struct TrainFlags {
  int epochs = 5;
  int batch = 16;
  double lr = 1e-3;
  double beta2 = 0.999;
  std::uint64_t seed = 1;
  int patience = 2;
  std::string history;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--epochs", f.epochs, "training epochs")->check(CLI::PositiveNumber);
  cmd->add_option("--batch", f.batch, "batch size")->check(CLI::PositiveNumber);
  cmd->add_option("--lr", f.lr, "Adam learning rate");
  cmd->add_option("--beta2", f.beta2, "Adam beta2");
  cmd->add_option("--seed", f.seed, "random seed");
  cmd->add_option("--patience", f.patience, "plateau patience (epochs)");
  cmd->add_option("--history", f.history, "write per-epoch history as JSON lines");
}

TrainOptions train_options(const TrainFlags& f) {
  TrainOptions o;
  o.epochs = f.epochs;
  o.batch_size = f.batch;
  o.seed = f.seed;
  return o;
}

OptimizerConfig optimizer(const TrainFlags& f, bool adversarial = false) {
  OptimizerConfig c = adversarial ? OptimizerConfig::adversarial() : OptimizerConfig{};
  c.lr = f.lr;
  c.beta2 = f.beta2;
  c.plateau_patience = f.patience;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Chest-film second-opinion toolkit"};
  app.require_subcommand(1);
  std::string out;
  std::string bundle_path;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic phantom dataset manifest");
  std::uint64_t gen_seed = 7;
  std::size_t gen_n = 200;
  int gen_size = 64, gen_classes = 14;
  double gen_rate = 0.5;
  gen->add_option("--seed", gen_seed);
  gen->add_option("--n", gen_n, "number of samples")->check(CLI::PositiveNumber);
  gen->add_option("--size", gen_size, "image size")->check(CLI::Range(8, 1024));
  gen->add_option("--classes", gen_classes, "number of classes (first names of the default list)")
      ->check(CLI::Range(1, 14));
  gen->add_option("--rate", gen_rate, "per-class positive rate")->check(CLI::Range(0.0, 1.0));
  gen->add_option("--out", out, "manifest path (stdout if omitted)");

  // train-clf
  auto* tclf = app.add_subcommand("train-clf", "train the classifier and write a bundle");
  std::string dataset;
  TrainFlags tf;
  int input_size = 32;
  double aug_level = 0.0;
  tclf->add_option("--dataset", dataset)->required();
  tclf->add_option("--out", out, "bundle directory")->required();
  tclf->add_option("--input-size", input_size)->check(CLI::Range(8, 512));
  tclf->add_option("--aug-level", aug_level, "augmentation level (1 = 45deg/15%/15%)")->check(CLI::Range(0.0, 2.0));
  add_train_flags(tclf, tf);

  // train-ae / train-ali
  auto* tae = app.add_subcommand("train-ae", "train the L2 autoencoder gate and attach it to a bundle");
  auto* tali = app.add_subcommand("train-ali", "train the adversarial autoencoder gate and attach it to a bundle");
  std::string metric_name = "recon_l2";
  int ae_size = 64, latent_dim = 128;
  double percentile = 95.0, recon_weight = 1.0;
  for (auto* cmd : {tae, tali}) {
    cmd->add_option("--dataset", dataset)->required();
    cmd->add_option("--bundle", bundle_path, "classifier bundle to attach to")->envname("XRAY_BUNDLE");
    cmd->add_option("--out", out, "output bundle directory (defaults to --bundle)");
    cmd->add_option("--metric", metric_name, "gate metric: latent_l2, recon_l1, recon_l2, ssim");
    cmd->add_option("--ae-size", ae_size)->check(CLI::Range(8, 256));
    cmd->add_option("--latent", latent_dim)->check(CLI::PositiveNumber);
    cmd->add_option("--percentile", percentile, "admitted share of validation phantoms")->check(CLI::Range(1.0, 100.0));
    add_train_flags(cmd, tf);
  }
  tali->add_option("--recon-weight", recon_weight, "weight of the reconstruction term")->check(CLI::NonNegativeNumber);

  // eval
  auto* ev = app.add_subcommand("eval", "per-class AUC with bootstrap spread");
  std::string split = "test";
  BootstrapOptions boot;
  ev->add_option("--bundle", bundle_path)->envname("XRAY_BUNDLE");
  ev->add_option("--dataset", dataset)->required();
  ev->add_option("--split-seed", tf.seed, "seed of the train/val/test partition");
  ev->add_option("--split", split, "train, val, test or all");
  ev->add_option("--seed", boot.seed);
  ev->add_option("--splits", boot.n_splits)->check(CLI::PositiveNumber);
  ev->add_option("--fraction", boot.split_fraction)->check(CLI::Range(0.01, 1.0));
  ev->add_flag("--stratify", boot.stratify, "keep class balance in each split");
  ev->add_option("--out", out);

  // ood-eval
  auto* oe = app.add_subcommand("ood-eval", "separation AUC of each gate metric against an outlier family");
  std::string family = "noise";
  std::size_t n_ood = 100;
  std::uint64_t ood_seed = 99;
  oe->add_option("--bundle", bundle_path)->envname("XRAY_BUNDLE");
  oe->add_option("--dataset", dataset)->required();
  oe->add_option("--split-seed", tf.seed, "seed of the train/val/test partition");
  oe->add_option("--split", split);
  oe->add_option("--family", family, "noise, stripes, inverted or blank");
  oe->add_option("--n", n_ood)->check(CLI::PositiveNumber);
  oe->add_option("--seed", ood_seed);
  oe->add_option("--out", out);

  // retention
  auto* ret = app.add_subcommand("retention", "task AUC as the gate cutoff tightens");
  int cutoffs = 10;
  ret->add_option("--bundle", bundle_path)->envname("XRAY_BUNDLE");
  ret->add_option("--dataset", dataset)->required();
  ret->add_option("--split-seed", tf.seed, "seed of the train/val/test partition");
  ret->add_option("--split", split);
  ret->add_option("--cutoffs", cutoffs)->check(CLI::PositiveNumber);
  ret->add_option("--metric", metric_name);
  ret->add_option("--out", out);

  // aug-matrix
  auto* am = app.add_subcommand("aug-matrix", "train at several augmentation levels, test at several levels");
  std::string train_levels = "0,0.5,1", test_levels = "0,0.5,1";
  am->add_option("--dataset", dataset)->required();
  am->add_option("--train-levels", train_levels);
  am->add_option("--test-levels", test_levels);
  am->add_option("--input-size", input_size)->check(CLI::Range(8, 512));
  add_train_flags(am, tf);
  am->add_option("--out", out);

  // predict / explain / verify
  auto* pr = app.add_subcommand("predict", "classify one image behind the gate");
  std::string image_path;
  bool no_gate = false;
  pr->add_option("--bundle", bundle_path)->envname("XRAY_BUNDLE");
  pr->add_option("--image", image_path)->required();
  pr->add_flag("--no-gate", no_gate, "skip the out-of-distribution gate");
  pr->add_option("--out", out);

  auto* ex = app.add_subcommand("explain", "saliency or class activation map for one image");
  std::string cls = "all", method = "saliency";
  ex->add_option("--bundle", bundle_path)->envname("XRAY_BUNDLE");
  ex->add_option("--image", image_path)->required();
  ex->add_option("--class", cls, "class index, class name or all");
  ex->add_option("--method", method, "saliency or cam");
  ex->add_option("--out", out, "output directory")->required();

  auto* ve = app.add_subcommand("verify", "re-run fixtures and compare with stored references");
  std::string images_dir;
  ve->add_option("--bundle", bundle_path)->envname("XRAY_BUNDLE");
  ve->add_option("--images", images_dir, "directory of fixture PNGs (defaults to the bundle's own)");
  ve->add_option("--out", out);

  // serve
  auto* sv = app.add_subcommand("serve", "run the local HTTP service");
  ServiceConfig scfg;
  double max_upload_mib = 16.0;
  sv->add_option("--bundle", bundle_path)->envname("XRAY_BUNDLE");
  sv->add_option("--bind", scfg.bind_address);
  sv->add_option("--port", scfg.port)->check(CLI::Range(0, 65535));
  sv->add_option("--max-upload-mib", max_upload_mib)->check(CLI::Range(1.0, 4096.0));
  sv->add_flag("--no-gate", no_gate, "disable the out-of-distribution gate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return exit_usage;
  }

  try {
    if (*gen) {
      std::vector<std::string> names(default_class_names().begin(), default_class_names().begin() + gen_classes);
      write_text(out, make_dataset(gen_seed, gen_n, names, gen_size, gen_rate).to_json().dump(2) + "\n");
      return 0;
    }

    if (*tclf) {
      const DatasetManifest d = load_dataset(dataset);
      const DatasetSplit s = split_dataset(d.size(), tf.seed);
      const LabeledSet train = materialize(d, s.train), val = materialize(d, s.val), test = materialize(d, s.test);
      ClassifierConfig cfg;
      cfg.input_size = input_size;
      cfg.num_classes = static_cast<int>(d.class_names.size());
      const PreprocessSpec spec{input_size, 0.5, 0.25, true};
      const ClassifierTrainResult r =
          train_classifier(train, val, cfg, optimizer(tf), AugmentationPolicy::scaled(aug_level), spec, train_options(tf));
      if (!tf.history.empty()) write_text(tf.history, history_jsonl(r.history));
      const LabeledSet& fix = test.size() >= fixture_count ? test : train;
      std::vector<Image> fixtures(fix.images.begin(), fix.images.begin() + std::min(fixture_count, fix.size()));
      const ModelBundle b = make_bundle(r, d.class_names, val.size() ? val : train, fixtures);
      write_bundle(b, out);
      std::cout << "wrote " << out << " (" << b.weights.size() << " weights, final loss " << r.history.back().loss
                << ")\n";
      return 0;
    }

    if (*tae || *tali) {
      ModelBundle b = load_bundle_dir(bundle_path);
      const DatasetManifest d = load_dataset(dataset);
      const DatasetSplit s = split_dataset(d.size(), tf.seed);
      AutoencoderConfig cfg;
      cfg.input_size = ae_size;
      cfg.latent_dim = latent_dim;
      const PreprocessSpec spec{ae_size, 0.0, 1.0, true};
      const std::vector<Image> train = ae_images(materialize(d, s.train).images, spec);
      const std::vector<Image> val = ae_images(materialize(d, s.val.empty() ? s.train : s.val).images, spec);
      AutoencoderTrainResult r;
      if (*tae) {
        r = train_autoencoder_l2(train, cfg, optimizer(tf), train_options(tf));
      } else {
        AdversarialOptions adv;
        adv.reconstruction_weight = recon_weight;
        r = train_adversarial(train, cfg, optimizer(tf, true), adv, train_options(tf)).autoencoder;
      }
      if (!tf.history.empty()) write_text(tf.history, history_jsonl(r.history));
      b.ood = make_ood_model(r, ae_size, ood_metric_from_string(metric_name), val, percentile);
      const std::string dest = out.empty() ? bundle_path : out;
      write_bundle(b, dest);
      std::cout << "wrote " << dest << " (gate " << metric_name << " threshold " << b.ood->threshold << ")\n";
      return 0;
    }

    if (*ev) {
      const ModelBundle b = load_bundle_dir(bundle_path);
      const DatasetManifest d = load_dataset(dataset);
      const LabeledSet set = subset(d, split_dataset(d.size(), tf.seed), split);
      write_text(out, evaluation_report(b, set, boot).dump(2) + "\n");
      return 0;
    }

    if (*oe) {
      const ModelBundle b = load_bundle_dir(bundle_path);
      if (!b.ood) fail(ErrorCode::InvalidConfig, "bundle has no autoencoder");
      const DatasetManifest d = load_dataset(dataset);
      const LabeledSet set = subset(d, split_dataset(d.size(), tf.seed), split);
      const OodFamily f = ood_family_from_string(family);
      std::vector<Image> outliers;
      for (std::size_t i = 0; i < n_ood; ++i) outliers.push_back(gen_ood(ood_seed + i, f, d.image_size));
      nlohmann::json j{{"family", family}, {"n_in", set.size()}, {"n_out", n_ood}};
      j["separation_auc"] = separation_report(*b.ood, set.images, outliers);
      write_text(out, j.dump(2) + "\n");
      return 0;
    }

    if (*ret) {
      const ModelBundle b = load_bundle_dir(bundle_path);
      if (!b.ood) fail(ErrorCode::InvalidConfig, "bundle has no autoencoder");
      const DatasetManifest d = load_dataset(dataset);
      const LabeledSet set = subset(d, split_dataset(d.size(), tf.seed), split);
      const OodMetricKind kind = ood_metric_from_string(metric_name);
      const std::vector<double> ood_scores = metric_scores(score_images(*b.ood, set.images), kind);
      const Network net(b.graph);
      std::vector<std::vector<double>> task;
      for (const auto& img : set.images) task.push_back(predict_probabilities(net, b.weights, b.preprocess, img));
      nlohmann::json j{{"metric", metric_name}, {"n", set.size()}};
      j["points"] = to_json(retention_curve(ood_scores, task, set.labels, cutoffs, kind));
      write_text(out, j.dump(2) + "\n");
      return 0;
    }

    if (*am) {
      const DatasetManifest d = load_dataset(dataset);
      const DatasetSplit s = split_dataset(d.size(), tf.seed);
      const LabeledSet train = materialize(d, s.train), val = materialize(d, s.val), test = materialize(d, s.test);
      ClassifierConfig cfg;
      cfg.input_size = input_size;
      cfg.num_classes = static_cast<int>(d.class_names.size());
      const PreprocessSpec spec{input_size, 0.5, 0.25, true};
      std::vector<TrainedModel> models;
      for (const auto& policy : parse_levels(train_levels)) {
        const ClassifierTrainResult r = train_classifier(train, val, cfg, optimizer(tf), policy, spec, train_options(tf));
        models.push_back({policy.label(), r.graph, r.weights, r.preprocess});
      }
      write_text(out, augmentation_matrix(models, test, parse_levels(test_levels), tf.seed).to_json().dump(2) + "\n");
      return 0;
    }

    if (*pr) {
      const Service service(load_bundle_dir(bundle_path), !no_gate);
      const Response r = service.predict(read_text(image_path));
      write_text(out, nlohmann::json::parse(r.body).dump(2) + "\n");
      if (r.status >= 500) return exit_runtime;
      return r.status >= 400 ? exit_usage : 0;
    }

    if (*ex) {
      const ModelBundle b = load_bundle_dir(bundle_path);
      const Image img = decode_image(read_text(image_path));
      std::optional<std::size_t> index;
      if (cls != "all") {
        for (std::size_t i = 0; i < b.class_names.size() && !index; ++i)
          if (b.class_names[i] == cls) index = i;
        if (!index) {
          try {
            std::size_t pos = 0;
            const long v = std::stol(cls, &pos);
            if (pos != cls.size() || v < 0) throw std::invalid_argument(cls);
            index = static_cast<std::size_t>(v);
          } catch (const std::logic_error&) {
            fail(ErrorCode::BadClassIndex, "unknown class '" + cls + "'");
          }
        }
      }
      const Explanation e = explain(b, img, explain_method_from_string(method), index);
      const Overlay o = e.overlay();
      const fs::path dir(out);
      write_bytes(dir / "overlay.png", encode_png(o.heat));
      write_bytes(dir / "composite.png", encode_png(o.composite()));
      write_bytes(dir / "map.f32", heatmap_raw_f32(e.heatmap));
      write_text((dir / "map.json").string(), e.sidecar().dump(2) + "\n");
      std::cout << "wrote " << dir.string() << "\n";
      return 0;
    }

    if (*ve) {
      const ModelBundle b = load_bundle_dir(bundle_path);
      DiffReport report;
      if (images_dir.empty()) {
        report = verify_bundle(b);
      } else {
        std::vector<std::vector<double>> refs;
        std::vector<Image> images;
        for (const auto& f : b.fixtures) {
          const fs::path p = fs::path(images_dir) / (f.name + ".png");
          if (!fs::exists(p)) fail(ErrorCode::InvalidConfig, "missing fixture image " + p.string());
          images.push_back(decode_image(read_text(p.string())));
          refs.push_back(f.reference);
        }
        report = verify_bundle(b, refs, images);
      }
      nlohmann::json j = report.to_json();
      j["tolerance"] = bundle_verify_tolerance;
      j["passed"] = report.within(bundle_verify_tolerance);
      write_text(out, j.dump(2) + "\n");
      return report.within(bundle_verify_tolerance) ? 0 : exit_runtime;
    }

    if (*sv) {
      scfg.bundle_path = bundle_path;
      scfg.ood_gate = !no_gate;
      scfg.max_upload_bytes = static_cast<std::size_t>(max_upload_mib * mebibyte);
      serve(scfg, [&](int port) {
        std::cout << "listening on http://" << scfg.bind_address << ":" << port << std::endl;
      });
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.is_validation() ? exit_usage : exit_runtime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_runtime;
  }
  return exit_usage;
}
