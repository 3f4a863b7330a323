#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "xmh/ndcore.hpp"

namespace xmh {

inline constexpr std::size_t kSemanticDim = 512;
inline constexpr std::size_t kFullHiddenWidth = 4096;
inline constexpr std::array<std::size_t, 5> kPoolWindows = {1, 2, 3, 5, 10};

// x * weight + bias; weight is fan_in x fan_out, bias is 1 x fan_out.
struct DenseLayer {
  Matrix weight;
  Matrix bias;
  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

enum class NetworkKind : std::uint8_t { kLabel, kImage, kText, kDiscriminator };

// Layer stacks:
//   label:         c   -> h (relu) -> 512 (relu) -> K+c
//   image:         d_v -> 512 (relu) -> K+c
//   text:          fusion(5 -> 1) then d_t -> h (relu) -> 512 (relu) -> K+c
//   discriminator: 512 -> h (relu) -> h (relu) -> 1 (linear)
// Generator outputs apply tanh to the first K units and sigmoid to the last c.
struct Network {
  NetworkKind kind = NetworkKind::kLabel;
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  friend bool operator==(const Network&, const Network&) = default;
};

struct ModelShape {
  std::size_t code_length = 16;  // K
  std::size_t classes = 0;       // c
  std::size_t image_dim = 0;     // d_v
  std::size_t text_dim = 0;      // d_t
  std::size_t hidden = kFullHiddenWidth;
  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

// Scales the 4096-unit hidden layers; the 512-unit semantic layer is fixed.
std::size_t scaled_hidden_width(double width_factor);

// Xavier-uniform weights, zero biases; the text fusion kernel starts at 0.2 each.
Network init_network(NetworkKind kind, const ModelShape& shape, std::uint64_t seed);
// Generic stack initialization from a dimension list (dims.size() - 1 layers).
std::vector<DenseLayer> init_params(std::span<const std::size_t> dims, std::uint64_t seed);

struct Model {
  ModelShape shape;
  Network label;
  Network image;
  Network text;
  Network disc_image;
  Network disc_text;

  static Model create(const ModelShape& shape, std::uint64_t seed);
  friend bool operator==(const Model&, const Model&) = default;
};

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

// Network parameters registered on a tape, as trainable parameters or constants.
struct BoundNetwork {
  std::vector<NodeId> weights;
  std::vector<NodeId> biases;

  // Pairs each tape node with the storage it updates.
  std::vector<ParamBinding> bindings(Network& net) const;
};

BoundNetwork bind(Tape& tape, const Network& net, bool trainable);

struct GeneratorNodes {
  NodeId semantic;  // m x 512
  NodeId hash;      // m x K, tanh
  NodeId labels;    // m x c, sigmoid
};

// Rows of `input` are instances. Text networks receive the raw bag-of-words.
GeneratorNodes generator_forward(Tape& tape, const Network& net, const BoundNetwork& bound,
                                 const Matrix& input, std::size_t code_length);
NodeId discriminator_forward(Tape& tape, const BoundNetwork& bound, NodeId features);

// Stride-1 average pooling with truncated edge windows; the window for
// position i spans [i - (w-1)/2, i + w/2].
std::vector<double> average_pool(std::span<const double> t, std::size_t window);
Matrix average_pool_rows(const Matrix& t, std::size_t window);

// Per-position combination of the five pooled maps with a shared kernel.
std::vector<double> ms_fusion(std::span<const double> t, std::span<const double> kernel,
                              double bias = 0.0);

// Frozen-parameter evaluation on a batch.
struct ModalityOutput {
  Matrix semantic;
  Matrix hash;
  Matrix labels;
};

ModalityOutput evaluate_generator(const Network& net, const Matrix& input, std::size_t code_length);
Matrix evaluate_discriminator(const Network& net, const Matrix& features);

ModalityOutput labnet_forward(const Model& model, const Matrix& labels);
ModalityOutput imgnet_forward(const Model& model, const Matrix& images);
ModalityOutput txtnet_forward(const Model& model, const Matrix& texts);

}  // namespace xmh
