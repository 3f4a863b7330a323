#include "xmh/networks.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "binary_io.hpp"
#include "xmh/errors.hpp"

namespace xmh {
namespace {

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

std::size_t first_dense(const Network& net) { return net.kind == NetworkKind::kText ? 1 : 0; }

void check_chain(const Network& net) {
  const std::size_t start = first_dense(net);
  if (net.layers.size() <= start) throw ShapeError("network has no dense layers");
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const DenseLayer& l = net.layers[i];
    if (l.bias.rows() != 1 || l.bias.cols() != l.weight.cols()) {
      throw ShapeError("layer " + std::to_string(i) + ": bias " + l.bias.shape_string() +
                       " does not match weight " + l.weight.shape_string());
    }
    if (i > start && net.layers[i - 1].weight.cols() != l.weight.rows()) {
      throw ShapeError("layer " + std::to_string(i) + ": input width " +
                       std::to_string(l.weight.rows()) + " does not follow output width " +
                       std::to_string(net.layers[i - 1].weight.cols()));
    }
  }
  if (net.kind == NetworkKind::kText) {
    const DenseLayer& f = net.layers[0];
    if (f.weight.rows() != kPoolWindows.size() || f.weight.cols() != 1) {
      throw ShapeError("text fusion kernel must be 5x1, got " + f.weight.shape_string());
    }
  }
}

std::vector<std::size_t> layer_dims(NetworkKind kind, const ModelShape& s) {
  const std::size_t out = s.code_length + s.classes;
  switch (kind) {
    case NetworkKind::kLabel: return {s.classes, s.hidden, kSemanticDim, out};
    case NetworkKind::kImage: return {s.image_dim, kSemanticDim, out};
    case NetworkKind::kText: return {s.text_dim, s.hidden, kSemanticDim, out};
    case NetworkKind::kDiscriminator: return {kSemanticDim, s.hidden, s.hidden, 1};
  }
  return {};
}

// Pooled maps for every window size, one constant node each.
std::array<NodeId, kPoolWindows.size()> pooled_inputs(Tape& tape, const Matrix& texts) {
  if (texts.cols() < kPoolWindows.back()) {
    throw ContractError("text dimension " + std::to_string(texts.cols()) +
                        " is smaller than the largest pooling window (10)");
  }
  std::array<NodeId, kPoolWindows.size()> maps{};
  for (std::size_t k = 0; k < kPoolWindows.size(); ++k) {
    maps[k] = tape.constant(average_pool_rows(texts, kPoolWindows[k]));
  }
  return maps;
}

}  // namespace

std::size_t Network::input_dim() const {
  return layers.at(first_dense(*this)).weight.rows();
}

std::size_t Network::output_dim() const { return layers.back().weight.cols(); }

std::size_t scaled_hidden_width(double width_factor) {
  if (!(width_factor > 0.0)) throw ContractError("width factor must be positive");
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(kFullHiddenWidth * width_factor)));
}

std::vector<DenseLayer> init_params(std::span<const std::size_t> dims, std::uint64_t seed) {
  if (dims.size() < 2) throw ContractError("init_params: need at least two dimensions");
  auto rng = make_rng(seed, 0);
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::size_t fan_in = dims[i];
    const std::size_t fan_out = dims[i + 1];
    if (fan_in == 0 || fan_out == 0) throw ContractError("init_params: zero-width layer");
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    DenseLayer layer{Matrix(fan_in, fan_out), Matrix(1, fan_out)};
    for (double& w : layer.weight.data()) w = dist(rng);
    layers.push_back(std::move(layer));
  }
  return layers;
}

Network init_network(NetworkKind kind, const ModelShape& shape, std::uint64_t seed) {
  if (shape.code_length == 0 || shape.classes == 0 || shape.hidden == 0) {
    throw ContractError("init_network: K, c and hidden width must be positive");
  }
  const auto dims = layer_dims(kind, shape);
  Network net{kind, {}};
  if (kind == NetworkKind::kText) {
    if (shape.text_dim < kPoolWindows.back()) {
      throw ContractError("init_network: text dimension must be at least 10");
    }
    net.layers.push_back({Matrix(kPoolWindows.size(), 1, 0.2), Matrix(1, 1)});
  }
  for (auto& layer : init_params(dims, seed)) net.layers.push_back(std::move(layer));
  return net;
}

Model Model::create(const ModelShape& shape, std::uint64_t seed) {
  auto sub = [seed](std::uint64_t stream) {
    auto rng = make_rng(seed, stream + 1);
    return rng();
  };
  return Model{shape,
               init_network(NetworkKind::kLabel, shape, sub(0)),
               init_network(NetworkKind::kImage, shape, sub(1)),
               init_network(NetworkKind::kText, shape, sub(2)),
               init_network(NetworkKind::kDiscriminator, shape, sub(3)),
               init_network(NetworkKind::kDiscriminator, shape, sub(4))};
}

std::vector<ParamBinding> BoundNetwork::bindings(Network& net) const {
  if (weights.size() != net.layers.size()) throw ContractError("bindings: layer count mismatch");
  std::vector<ParamBinding> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back({&net.layers[i].weight, weights[i]});
    out.push_back({&net.layers[i].bias, biases[i]});
  }
  return out;
}

BoundNetwork bind(Tape& tape, const Network& net, bool trainable) {
  check_chain(net);
  BoundNetwork b;
  for (const DenseLayer& l : net.layers) {
    b.weights.push_back(trainable ? tape.parameter(l.weight) : tape.constant(l.weight));
    b.biases.push_back(trainable ? tape.parameter(l.bias) : tape.constant(l.bias));
  }
  return b;
}

GeneratorNodes generator_forward(Tape& tape, const Network& net, const BoundNetwork& bound,
                                 const Matrix& input, std::size_t code_length) {
  if (net.kind == NetworkKind::kDiscriminator) {
    throw ContractError("generator_forward: discriminator passed as generator");
  }
  if (input.cols() != net.input_dim()) {
    throw ShapeError("generator_forward: input " + input.shape_string() + " but network expects " +
                     std::to_string(net.input_dim()) + " columns");
  }
  if (net.output_dim() <= code_length) {
    throw ShapeError("generator_forward: output width " + std::to_string(net.output_dim()) +
                     " leaves no label units for K = " + std::to_string(code_length));
  }

  NodeId x;
  std::size_t start = 0;
  if (net.kind == NetworkKind::kText) {
    const auto maps = pooled_inputs(tape, input);
    NodeId fused = tape.scale_by_entry(maps[0], bound.weights[0], 0);
    for (std::size_t k = 1; k < maps.size(); ++k) {
      fused = tape.add(fused, tape.scale_by_entry(maps[k], bound.weights[0], k));
    }
    const NodeId ones = tape.constant(Matrix(input.rows(), input.cols(), 1.0));
    x = tape.add(fused, tape.scale_by_entry(ones, bound.biases[0], 0));
    start = 1;
  } else {
    x = tape.constant(input);
  }

  const std::size_t last = net.layers.size() - 1;
  NodeId semantic = x;
  for (std::size_t i = start; i < last; ++i) {
    x = tape.relu(tape.add_row_vector(tape.matmul(x, bound.weights[i]), bound.biases[i]));
    semantic = x;
  }
  const NodeId out = tape.add_row_vector(tape.matmul(x, bound.weights[last]), bound.biases[last]);
  const std::size_t classes = net.output_dim() - code_length;
  return {semantic, tape.tanh(tape.slice_cols(out, 0, code_length)),
          tape.sigmoid(tape.slice_cols(out, code_length, classes))};
}

NodeId discriminator_forward(Tape& tape, const BoundNetwork& bound, NodeId features) {
  if (tape.value(features).cols() != tape.value(bound.weights.front()).rows()) {
    throw ShapeError("discriminator_forward: features " + tape.value(features).shape_string() +
                     " but discriminator expects " +
                     std::to_string(tape.value(bound.weights.front()).rows()) + " columns");
  }
  NodeId x = features;
  const std::size_t last = bound.weights.size() - 1;
  for (std::size_t i = 0; i < last; ++i) {
    x = tape.relu(tape.add_row_vector(tape.matmul(x, bound.weights[i]), bound.biases[i]));
  }
  return tape.add_row_vector(tape.matmul(x, bound.weights[last]), bound.biases[last]);
}

std::vector<double> average_pool(std::span<const double> t, std::size_t window) {
  if (window == 0) throw ContractError("average_pool: zero window");
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(t.size());
  const std::ptrdiff_t before = static_cast<std::ptrdiff_t>((window - 1) / 2);
  const std::ptrdiff_t after = static_cast<std::ptrdiff_t>(window / 2);
  std::vector<double> out(t.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, i - before);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n - 1, i + after);
    double s = 0.0;
    for (std::ptrdiff_t j = lo; j <= hi; ++j) s += t[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] = s / static_cast<double>(hi - lo + 1);
  }
  return out;
}

Matrix average_pool_rows(const Matrix& t, std::size_t window) {
  Matrix out(t.rows(), t.cols());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const auto pooled = average_pool(t.row(r), window);
    std::copy(pooled.begin(), pooled.end(), out.row(r).begin());
  }
  return out;
}

std::vector<double> ms_fusion(std::span<const double> t, std::span<const double> kernel, double bias) {
  if (t.size() < kPoolWindows.back()) {
    throw ContractError("ms_fusion: text dimension " + std::to_string(t.size()) +
                        " is smaller than the largest pooling window (10)");
  }
  if (kernel.size() != kPoolWindows.size()) throw ShapeError("ms_fusion: kernel must have 5 weights");
  std::vector<double> out(t.size(), bias);
  for (std::size_t k = 0; k < kPoolWindows.size(); ++k) {
    const auto pooled = average_pool(t, kPoolWindows[k]);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += kernel[k] * pooled[i];
  }
  return out;
}

ModalityOutput evaluate_generator(const Network& net, const Matrix& input, std::size_t code_length) {
  Tape tape;
  const BoundNetwork bound = bind(tape, net, false);
  const GeneratorNodes nodes = generator_forward(tape, net, bound, input, code_length);
  return {tape.value(nodes.semantic), tape.value(nodes.hash), tape.value(nodes.labels)};
}

Matrix evaluate_discriminator(const Network& net, const Matrix& features) {
  Tape tape;
  const BoundNetwork bound = bind(tape, net, false);
  return tape.value(discriminator_forward(tape, bound, tape.constant(features)));
}

ModalityOutput labnet_forward(const Model& model, const Matrix& labels) {
  for (double v : labels.data()) {
    if (v != 0.0 && v != 1.0) throw ContractError("labnet_forward: labels must be 0 or 1");
  }
  return evaluate_generator(model.label, labels, model.shape.code_length);
}

ModalityOutput imgnet_forward(const Model& model, const Matrix& images) {
  return evaluate_generator(model.image, images, model.shape.code_length);
}

ModalityOutput txtnet_forward(const Model& model, const Matrix& texts) {
  return evaluate_generator(model.text, texts, model.shape.code_length);
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {
constexpr std::string_view kModelMagic = "XMHM";
constexpr std::uint32_t kModelVersion = 1;

void write_network(io::Writer& w, const Network& net) {
  w.u32(static_cast<std::uint32_t>(net.layers.size()));
  for (const DenseLayer& l : net.layers) {
    w.u32(static_cast<std::uint32_t>(l.weight.rows()));
    w.u32(static_cast<std::uint32_t>(l.weight.cols()));
    w.f64s(l.weight.data());
    w.f64s(l.bias.data());
  }
}

Network read_network(io::Reader& r, NetworkKind kind, const char* name) {
  Network net{kind, {}};
  const std::uint32_t count = r.u32("layer count");
  if (count == 0 || count > 16) r.fail(std::string(name) + ": implausible layer count " + std::to_string(count));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t rows = r.u32("layer rows");
    const std::size_t cols = r.u32("layer cols");
    if (rows == 0 || cols == 0) r.fail(std::string(name) + ": zero-sized layer");
    if (r.remaining() < (rows * cols + cols) * sizeof(double)) {
      r.fail(std::string(name) + ": truncated layer payload");
    }
    DenseLayer l{Matrix(rows, cols), Matrix(1, cols)};
    r.f64s(l.weight.data(), "weights");
    r.f64s(l.bias.data(), "biases");
    net.layers.push_back(std::move(l));
  }
  try {
    check_chain(net);
  } catch (const ShapeError& e) {
    r.fail(std::string(name) + ": " + e.what());
  }
  return net;
}
}  // namespace

void save_model(const Model& model, const std::filesystem::path& path) {
  io::Writer w;
  w.magic(kModelMagic);
  w.u32(kModelVersion);
  w.u32(static_cast<std::uint32_t>(model.shape.code_length));
  w.u32(static_cast<std::uint32_t>(model.shape.classes));
  w.u32(static_cast<std::uint32_t>(model.shape.image_dim));
  w.u32(static_cast<std::uint32_t>(model.shape.text_dim));
  w.u32(static_cast<std::uint32_t>(kSemanticDim));
  for (const Network* net : {&model.label, &model.image, &model.text, &model.disc_image, &model.disc_text}) {
    write_network(w, *net);
  }
  w.write_to(path);
}

Model load_model(const std::filesystem::path& path) {
  auto r = io::Reader::from_file(path);
  r.expect_magic(kModelMagic);
  if (const auto version = r.u32("version"); version != kModelVersion) {
    r.fail("unsupported version " + std::to_string(version));
  }
  Model m;
  m.shape.code_length = r.u32("K");
  m.shape.classes = r.u32("c");
  m.shape.image_dim = r.u32("d_v");
  m.shape.text_dim = r.u32("d_t");
  const std::size_t s = r.u32("s");
  if (s != kSemanticDim) r.fail("field s = " + std::to_string(s) + " (expected 512)");
  if (m.shape.code_length == 0) r.fail("field K is zero");
  if (m.shape.classes == 0) r.fail("field c is zero");
  m.label = read_network(r, NetworkKind::kLabel, "label network");
  m.image = read_network(r, NetworkKind::kImage, "image network");
  m.text = read_network(r, NetworkKind::kText, "text network");
  m.disc_image = read_network(r, NetworkKind::kDiscriminator, "image discriminator");
  m.disc_text = read_network(r, NetworkKind::kDiscriminator, "text discriminator");
  r.expect_end();

  const std::size_t out = m.shape.code_length + m.shape.classes;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) r.fail("header/network mismatch: " + what);
  };
  expect(m.label.input_dim() == m.shape.classes && m.label.output_dim() == out, "label network dims");
  expect(m.image.input_dim() == m.shape.image_dim && m.image.output_dim() == out, "image network dims");
  expect(m.text.input_dim() == m.shape.text_dim && m.text.output_dim() == out, "text network dims");
  expect(m.disc_image.input_dim() == s && m.disc_image.output_dim() == 1, "image discriminator dims");
  expect(m.disc_text.input_dim() == s && m.disc_text.output_dim() == 1, "text discriminator dims");
  for (const Network* g : {&m.label, &m.image, &m.text}) {
    expect(g->layers[g->layers.size() - 2].weight.cols() == s, "semantic layer width");
  }
  m.shape.hidden = m.disc_image.layers.front().weight.cols();
  return m;
}

}  // namespace xmh
