#pragma once

// End-to-end workflows shared by the CLI and the acceptance suite: bundle
// assembly with fixtures, operating points, gate calibration and reports.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "xray/bundle.hpp"
#include "xray/eval.hpp"
#include "xray/ood.hpp"
#include "xray/phantom.hpp"
#include "xray/train.hpp"

namespace xray {

inline constexpr std::size_t fixture_count = 3;

/// Rounds an image through 8-bit PNG so the stored fixture is exactly what
/// a reader decodes.
inline Image quantize_8bit(const Image& img) { return decode_image(encode_png(img)); }

/// Fixtures with references from the in-memory (64-bit) model.
inline std::vector<Fixture> make_fixtures(const GraphSpec& graph, std::span<const double> weights,
                                          const PreprocessSpec& spec, const std::vector<Image>& images) {
  const Network net(graph);
  std::vector<Fixture> out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    Image img = quantize_8bit(images[i]);
    std::vector<double> ref = predict_probabilities(net, weights, spec, img);
    out.push_back({"fixture_" + std::to_string(i), std::move(img), std::move(ref)});
  }
  return out;
}

/// Youden-optimal operating point per class on a labeled set; 0.5 for
/// classes whose labels are single-valued there.
inline std::vector<double> operating_points(const Network& net, std::span<const double> weights,
                                            const PreprocessSpec& spec, const LabeledSet& set, std::size_t classes) {
  std::vector<std::vector<double>> scores(classes);
  std::vector<std::vector<int>> labels(classes);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const std::vector<double> p = predict_probabilities(net, weights, spec, set.images[i]);
    for (std::size_t c = 0; c < classes; ++c) {
      scores[c].push_back(p[c]);
      labels[c].push_back(set.labels[i][c]);
    }
  }
  std::vector<double> ops;
  for (std::size_t c = 0; c < classes; ++c)
    ops.push_back(detail::has_both_classes(labels[c]) ? optimal_operating_point(roc_curve(scores[c], labels[c])).opt
                                                      : 0.5);
  return ops;
}

inline ModelBundle make_bundle(const ClassifierTrainResult& r, std::vector<std::string> class_names,
                               const LabeledSet& calibration, const std::vector<Image>& fixture_images) {
  ModelBundle b;
  b.graph = r.graph;
  b.weights = r.weights;
  b.preprocess = r.preprocess;
  b.class_names = std::move(class_names);
  const Network net(b.graph);
  b.operating_points = operating_points(net, b.weights, b.preprocess, calibration, b.class_names.size());
  b.fixtures = make_fixtures(b.graph, b.weights, b.preprocess, fixture_images);
  return b;
}

/// Grayscale images cropped to the autoencoder input size.
inline std::vector<Image> ae_images(const std::vector<Image>& images, const PreprocessSpec& spec) {
  std::vector<Image> out;
  for (const auto& img : images) out.push_back(scale_and_crop(to_grayscale(img), spec));
  return out;
}

/// Scores of every image under one autoencoder, per metric kind.
inline std::vector<ReconstructionResult> score_images(const OodModel& m, const std::vector<Image>& images) {
  const Autoencoder ae = Autoencoder::from(m);
  std::vector<ReconstructionResult> out;
  for (const auto& img : ae_images(images, m.preprocess)) {
    ReconstructionResult r = reconstruct(ae, img, m.latent_reference);
    r.reconstruction = {};
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<double> metric_scores(const std::vector<ReconstructionResult>& rs, OodMetricKind kind) {
  std::vector<double> out;
  for (const auto& r : rs) out.push_back(r.score(kind));
  return out;
}

/// Packs trained autoencoder weights into an OodModel whose threshold
/// admits `percentile` percent of `calibration` images.
inline OodModel make_ood_model(const AutoencoderTrainResult& ae, int input_size, OodMetricKind metric,
                               const std::vector<Image>& calibration, double percentile = 95.0) {
  OodModel m;
  m.encoder = ae.graphs.encoder;
  m.decoder = ae.graphs.decoder;
  m.encoder_weights = ae.encoder_weights;
  m.decoder_weights = ae.decoder_weights;
  m.preprocess = {input_size, 0.0, 1.0, true};
  m.metric = metric;
  m.threshold = calibrate_threshold(metric_scores(score_images(m, calibration), metric), metric, percentile);
  return m;
}

/// Per-metric separation AUC between in-distribution and outlier images.
inline nlohmann::json separation_report(const OodModel& m, const std::vector<Image>& in,
                                        const std::vector<Image>& out) {
  const auto rin = score_images(m, in), rout = score_images(m, out);
  nlohmann::json j;
  for (OodMetricKind k : all_ood_metrics)
    j[to_string(k)] = separation_auc(metric_scores(rin, k), metric_scores(rout, k), k);
  return j;
}

/// Per-class bootstrap AUC estimates plus the full-set AUC.
inline nlohmann::json evaluation_report(const ModelBundle& b, const LabeledSet& set, const BootstrapOptions& opt) {
  const Network net(b.graph);
  const std::size_t K = b.class_names.size();
  std::vector<std::vector<double>> scores(K);
  std::vector<std::vector<int>> labels(K);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto p = predict_probabilities(net, b.weights, b.preprocess, set.images[i]);
    for (std::size_t c = 0; c < K; ++c) {
      scores[c].push_back(p[c]);
      labels[c].push_back(set.labels[i][c]);
    }
  }
  nlohmann::json classes = nlohmann::json::array();
  std::vector<double> aucs;
  for (std::size_t c = 0; c < K; ++c) {
    nlohmann::json e{{"name", b.class_names[c]}, {"operating_point", b.operating_points[c]}};
    if (detail::has_both_classes(labels[c])) {
      const double full = auc(scores[c], labels[c]);
      aucs.push_back(full);
      e["auc"] = full;
      try {
        e["bootstrap"] = bootstrap_auc(scores[c], labels[c], opt).to_json();
      } catch (const Error& err) {
        if (err.code() != ErrorCode::DegenerateLabels) throw;
        e["bootstrap"] = nullptr;
      }
    } else {
      e["auc"] = nullptr;
      e["bootstrap"] = nullptr;
    }
    classes.push_back(e);
  }
  return {{"n", set.size()},
          {"classes", classes},
          {"mean_auc", aucs.empty() ? nlohmann::json(nullptr) : nlohmann::json(mean(aucs))}};
}

}  // namespace xray
