#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "xmh/datamodel.hpp"
#include "xmh/losses.hpp"
#include "xmh/networks.hpp"

namespace xmh {

struct TrainConfig {
  HyperParams hyper;
  double lr = 1e-4;
  std::size_t batch_size = 128;
  std::size_t epochs = 100;  // T_max
  std::size_t code_length = 16;
  std::uint64_t seed = 1;
  double width_factor = 1.0;
  std::size_t inner_iters = 1;  // discriminator passes per epoch

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  LossReport label;
  LossReport image;
  LossReport text;
  double adv_image = 0.0;
  double adv_text = 0.0;
  Totals totals;
  double wall_ms = 0.0;
};

// One JSON object, no trailing newline.
std::string epoch_json(const EpochRecord& record);

struct TrainState {
  Model model;
  Matrix codes;  // n x K unified code B, entries in {-1, +1}
  std::size_t epoch = 0;
  std::vector<EpochRecord> history;
};

// Instances of one minibatch with everything the losses need.
struct Batch {
  std::vector<std::size_t> indices;
  Matrix images;
  Matrix texts;
  Matrix labels;
  Matrix similarity;
};

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices);

// sign(H^v + H^t + H^l) over every instance, with sign(0) = +1.
Matrix consolidate_codes(const Model& model, const Dataset& dataset);
Matrix sign_of_sum(const Matrix& h_image, const Matrix& h_text, const Matrix& h_label);

struct AdversaryReport {
  double image = 0.0;  // L_adv^v
  double text = 0.0;   // L_adv^t
};

// Squared-error discriminator losses on a batch under the current model.
AdversaryReport discriminator_losses(const Model& model, const Batch& batch);

// Mean |1 - |h|| of each generator's hash outputs over the dataset.
struct QuantizationGap {
  double label = 0.0;
  double image = 0.0;
  double text = 0.0;
};
QuantizationGap quantization_gap(const Model& model, const Dataset& dataset);

// Alternating optimization. Each epoch runs the label, image and text
// generator phases and then the discriminator phase, one pass over the
// shuffled minibatches each, and finally re-consolidates B.
class Trainer {
 public:
  using EpochObserver = std::function<void(const EpochRecord&)>;

  Trainer(const Dataset& dataset, TrainConfig config, EpochObserver observer = {});

  const TrainState& state() const { return state_; }
  TrainState& state() { return state_; }
  const TrainConfig& config() const { return config_; }

  // Minibatches for the next epoch, reshuffled by the seeded RNG.
  std::vector<Batch> next_batches();

  // Descend theta^l on (L^l - L_adv) / m.
  LossReport label_phase(const Batch& batch);
  // Descend theta^v (theta^t) on (L^{v,t} - L_adv^{v,t}) / m with theta^l frozen.
  LossReport image_phase(const Batch& batch);
  LossReport text_phase(const Batch& batch);
  // Descend both discriminators on L_adv / m with every generator frozen.
  AdversaryReport adversary_phase(const Batch& batch);

  void consolidate();
  EpochRecord run_epoch();
  const TrainState& run();

 private:
  Matrix code_slice(const Batch& batch) const;
  LossReport modality_phase(const Batch& batch, GeneratorRole role);
  void check_finite(double value, const char* phase, const char* term) const;

  const Dataset& dataset_;
  TrainConfig config_;
  EpochObserver observer_;
  TrainState state_;
  std::mt19937_64 shuffle_rng_;
};

TrainState train(const Dataset& dataset, const TrainConfig& config,
                 Trainer::EpochObserver observer = {});

}  // namespace xmh
