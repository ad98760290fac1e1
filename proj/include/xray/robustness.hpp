#pragma once

// Augmentation-robustness matrix: models trained at increasing augmentation
// levels (rows) evaluated on test sets augmented at increasing levels
// (columns).

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "xray/augment.hpp"
#include "xray/bundle.hpp"
#include "xray/engine.hpp"
#include "xray/eval.hpp"
#include "xray/train.hpp"

namespace xray {

struct TrainedModel {
  std::string label;
  GraphSpec graph;
  std::vector<double> weights;
  PreprocessSpec preprocess;
};

struct AugmentationMatrix {
  std::vector<std::string> train_levels;
  std::vector<std::string> test_levels;
  std::vector<std::vector<double>> auc;  // [train][test]

  nlohmann::json to_json() const {
    return {{"train_levels", train_levels}, {"test_levels", test_levels}, {"auc", auc}};
  }
};

/// Seed of the augmented test set for column `test_level`; identical for
/// every row so models see the same perturbed images.
inline std::uint64_t cell_seed(std::uint64_t seed, std::size_t test_level) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(test_level)};
  std::uint32_t v[2];
  seq.generate(v, v + 2);
  return (static_cast<std::uint64_t>(v[0]) << 32) | v[1];
}

/// Mean class AUC of one model on `test` augmented under `policy`.
inline double evaluate_cell(const TrainedModel& model, const LabeledSet& test, const AugmentationPolicy& policy,
                            std::uint64_t seed) {
  const Network net(model.graph);
  std::mt19937_64 rng(seed);
  std::vector<std::vector<double>> scores;
  for (const auto& img : test.images)
    scores.push_back(predict_probabilities(net, model.weights, model.preprocess, augment(img, policy, rng)));
  return mean_class_auc(scores, test.labels).value_or(0.5);
}

inline AugmentationMatrix augmentation_matrix(const std::vector<TrainedModel>& models, const LabeledSet& test,
                                              const std::vector<AugmentationPolicy>& test_policies,
                                              std::uint64_t seed) {
  AugmentationMatrix m;
  for (const auto& model : models) m.train_levels.push_back(model.label);
  for (const auto& p : test_policies) m.test_levels.push_back(p.label());
  for (const auto& model : models) {
    std::vector<double> row;
    for (std::size_t j = 0; j < test_policies.size(); ++j)
      row.push_back(evaluate_cell(model, test, test_policies[j], cell_seed(seed, j)));
    m.auc.push_back(std::move(row));
  }
  return m;
}

}  // namespace xray
