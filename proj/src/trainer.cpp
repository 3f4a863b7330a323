#include "xmh/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

#include "json.hpp"

#include "xmh/errors.hpp"

namespace xmh {
namespace {

constexpr std::size_t kEvalChunk = 256;

Matrix add3(const Matrix& a, const Matrix& b, const Matrix& c) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i] + c.data()[i];
  return out;
}

nlohmann::json report_json(const LossReport& r) {
  return {{"j1", r.j1}, {"j2", r.j2}, {"j3", r.j3}, {"j4", r.j4}, {"total", r.total}};
}

template <typename Fn>
void for_each_chunk(std::size_t n, Fn fn) {
  for (std::size_t begin = 0; begin < n; begin += kEvalChunk) {
    std::vector<std::size_t> idx(std::min(kEvalChunk, n - begin));
    std::iota(idx.begin(), idx.end(), begin);
    fn(idx);
  }
}

}  // namespace

void TrainConfig::validate() const {
  auto non_negative = [](double v) { return v >= 0.0 && std::isfinite(v); };
  if (!non_negative(hyper.alpha) || !non_negative(hyper.gamma) || !non_negative(hyper.eta) ||
      !non_negative(hyper.beta)) {
    throw ContractError("TrainConfig: alpha, gamma, eta, beta must be finite and non-negative");
  }
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ContractError("TrainConfig: lr must be non-negative");
  if (batch_size == 0) throw ContractError("TrainConfig: batch_size must be positive");
  if (code_length == 0) throw ContractError("TrainConfig: code length must be positive");
  if (!(width_factor > 0.0)) throw ContractError("TrainConfig: width factor must be positive");
  if (inner_iters == 0) throw ContractError("TrainConfig: inner_iters must be positive");
}

std::string epoch_json(const EpochRecord& r) {
  nlohmann::json j = {{"epoch", r.epoch},
                      {"label", report_json(r.label)},
                      {"image", report_json(r.image)},
                      {"text", report_json(r.text)},
                      {"adv_v", r.adv_image},
                      {"adv_t", r.adv_text},
                      {"L_gen", r.totals.generator},
                      {"L_adv", r.totals.adversarial},
                      {"wall_ms", r.wall_ms}};
  return j.dump();
}

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices) {
  const LabelMatrix labels = dataset.labels().gather_rows(indices);
  return {std::vector<std::size_t>(indices.begin(), indices.end()),
          dataset.images().gather_rows(indices), dataset.texts().gather_rows(indices),
          labels.to_matrix(), build_similarity(labels, labels).to_matrix()};
}

Matrix sign_of_sum(const Matrix& h_image, const Matrix& h_text, const Matrix& h_label) {
  if (!(h_image.rows() == h_text.rows() && h_text.rows() == h_label.rows() &&
        h_image.cols() == h_text.cols() && h_text.cols() == h_label.cols())) {
    throw ShapeError("sign_of_sum: hash output shapes differ");
  }
  Matrix b = add3(h_image, h_text, h_label);
  for (double& v : b.data()) v = v >= 0.0 ? 1.0 : -1.0;
  return b;
}

Matrix consolidate_codes(const Model& model, const Dataset& dataset) {
  const std::size_t k = model.shape.code_length;
  Matrix codes(dataset.size(), k);
  for_each_chunk(dataset.size(), [&](const std::vector<std::size_t>& idx) {
    const Matrix hl = evaluate_generator(model.label, dataset.labels().gather_rows(idx).to_matrix(), k).hash;
    const Matrix hv = evaluate_generator(model.image, dataset.images().gather_rows(idx), k).hash;
    const Matrix ht = evaluate_generator(model.text, dataset.texts().gather_rows(idx), k).hash;
    const Matrix b = sign_of_sum(hv, ht, hl);
    for (std::size_t r = 0; r < idx.size(); ++r) std::ranges::copy(b.row(r), codes.row(idx[r]).begin());
  });
  return codes;
}

AdversaryReport discriminator_losses(const Model& model, const Batch& batch) {
  const std::size_t k = model.shape.code_length;
  const Matrix fl = evaluate_generator(model.label, batch.labels, k).semantic;
  const Matrix fv = evaluate_generator(model.image, batch.images, k).semantic;
  const Matrix ft = evaluate_generator(model.text, batch.texts, k).semantic;
  auto loss = [&](const Network& disc, const Matrix& fake) {
    return adversarial_objective(evaluate_discriminator(disc, fl).data(),
                                 evaluate_discriminator(disc, fake).data());
  };
  return {loss(model.disc_image, fv), loss(model.disc_text, ft)};
}

QuantizationGap quantization_gap(const Model& model, const Dataset& dataset) {
  const std::size_t k = model.shape.code_length;
  QuantizationGap gap;
  auto accumulate = [](double& acc, const Matrix& h) {
    for (double v : h.data()) acc += std::abs(1.0 - std::abs(v));
  };
  for_each_chunk(dataset.size(), [&](const std::vector<std::size_t>& idx) {
    accumulate(gap.label, evaluate_generator(model.label, dataset.labels().gather_rows(idx).to_matrix(), k).hash);
    accumulate(gap.image, evaluate_generator(model.image, dataset.images().gather_rows(idx), k).hash);
    accumulate(gap.text, evaluate_generator(model.text, dataset.texts().gather_rows(idx), k).hash);
  });
  const double count = static_cast<double>(dataset.size() * k);
  gap.label /= count;
  gap.image /= count;
  gap.text /= count;
  return gap;
}

Trainer::Trainer(const Dataset& dataset, TrainConfig config, EpochObserver observer)
    : dataset_(dataset), config_(config), observer_(std::move(observer)) {
  config_.validate();
  const DatasetDims dims = dataset.dims();
  const ModelShape shape{config_.code_length, dims.classes, dims.image_dim, dims.text_dim,
                         scaled_hidden_width(config_.width_factor)};
  state_.model = Model::create(shape, config_.seed);
  std::seed_seq seq{static_cast<std::uint32_t>(config_.seed),
                    static_cast<std::uint32_t>(config_.seed >> 32), 0x5eedU};
  shuffle_rng_.seed(seq);
  consolidate();
}

std::vector<Batch> Trainer::next_batches() {
  std::vector<std::size_t> order(dataset_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), shuffle_rng_);
  std::vector<Batch> batches;
  for (std::size_t begin = 0; begin < order.size(); begin += config_.batch_size) {
    const std::size_t end = std::min(order.size(), begin + config_.batch_size);
    batches.push_back(make_batch(dataset_, std::span(order).subspan(begin, end - begin)));
  }
  return batches;
}

Matrix Trainer::code_slice(const Batch& batch) const { return state_.codes.gather_rows(batch.indices); }

void Trainer::check_finite(double value, const char* phase, const char* term) const {
  if (!std::isfinite(value)) {
    throw DivergenceError("non-finite loss at epoch " + std::to_string(state_.epoch + 1) + ", phase " +
                          phase + ", term " + term);
  }
}

LossReport Trainer::label_phase(const Batch& batch) {
  Model& m = state_.model;
  Tape tape;
  const BoundNetwork lab = bind(tape, m.label, true);
  const BoundNetwork dv = bind(tape, m.disc_image, false);
  const BoundNetwork dt = bind(tape, m.disc_text, false);
  const GeneratorNodes out = generator_forward(tape, m.label, lab, batch.labels, m.shape.code_length);
  const ObjectiveNodes obj = generator_objective(tape, out, out, batch.similarity, code_slice(batch),
                                                 batch.labels, config_.hyper, GeneratorRole::kLabel);
  const NodeId adv = tape.add(adversarial_real_term(tape, discriminator_forward(tape, dv, out.semantic)),
                              adversarial_real_term(tape, discriminator_forward(tape, dt, out.semantic)));
  const double m_inv = 1.0 / static_cast<double>(batch.indices.size());
  const NodeId loss = tape.scale(tape.sub(obj.total, adv), m_inv);

  const LossReport report = obj.report(tape);
  check_finite(report.total, "label", "L^l");
  check_finite(tape.scalar(adv), "label", "L_adv");
  const GradientMap grads = tape.backward(loss);
  sgd_step(lab.bindings(m.label), grads, config_.lr, Direction::kDescent);
  return report;
}

LossReport Trainer::modality_phase(const Batch& batch, GeneratorRole role) {
  Model& m = state_.model;
  const bool image = role == GeneratorRole::kImage;
  Network& net = image ? m.image : m.text;
  const Network& disc = image ? m.disc_image : m.disc_text;
  const char* phase = image ? "image" : "text";

  Tape tape;
  const BoundNetwork lab = bind(tape, m.label, false);
  const BoundNetwork gen = bind(tape, net, true);
  const BoundNetwork d = bind(tape, disc, false);
  const GeneratorNodes lab_out = generator_forward(tape, m.label, lab, batch.labels, m.shape.code_length);
  const GeneratorNodes out = generator_forward(tape, net, gen, image ? batch.images : batch.texts,
                                               m.shape.code_length);
  const ObjectiveNodes obj = generator_objective(tape, out, lab_out, batch.similarity, code_slice(batch),
                                                 batch.labels, config_.hyper, role);
  const NodeId adv = adversarial_fake_term(tape, discriminator_forward(tape, d, out.semantic));
  const double m_inv = 1.0 / static_cast<double>(batch.indices.size());
  const NodeId loss = tape.scale(tape.sub(obj.total, adv), m_inv);

  const LossReport report = obj.report(tape);
  check_finite(report.total, phase, image ? "L^v" : "L^t");
  check_finite(tape.scalar(adv), phase, image ? "L_adv^v" : "L_adv^t");
  const GradientMap grads = tape.backward(loss);
  sgd_step(gen.bindings(net), grads, config_.lr, Direction::kDescent);
  return report;
}

LossReport Trainer::image_phase(const Batch& batch) { return modality_phase(batch, GeneratorRole::kImage); }
LossReport Trainer::text_phase(const Batch& batch) { return modality_phase(batch, GeneratorRole::kText); }

AdversaryReport Trainer::adversary_phase(const Batch& batch) {
  Model& m = state_.model;
  const std::size_t k = m.shape.code_length;
  Tape tape;
  const NodeId fl = tape.constant(evaluate_generator(m.label, batch.labels, k).semantic);
  const NodeId fv = tape.constant(evaluate_generator(m.image, batch.images, k).semantic);
  const NodeId ft = tape.constant(evaluate_generator(m.text, batch.texts, k).semantic);
  const BoundNetwork dv = bind(tape, m.disc_image, true);
  const BoundNetwork dt = bind(tape, m.disc_text, true);
  const NodeId adv_v = tape.add(adversarial_real_term(tape, discriminator_forward(tape, dv, fl)),
                                adversarial_fake_term(tape, discriminator_forward(tape, dv, fv)));
  const NodeId adv_t = tape.add(adversarial_real_term(tape, discriminator_forward(tape, dt, fl)),
                                adversarial_fake_term(tape, discriminator_forward(tape, dt, ft)));
  const double m_inv = 1.0 / static_cast<double>(batch.indices.size());
  const NodeId loss = tape.scale(tape.add(adv_v, adv_t), m_inv);

  const AdversaryReport report{tape.scalar(adv_v), tape.scalar(adv_t)};
  check_finite(report.image, "adversary", "L_adv^v");
  check_finite(report.text, "adversary", "L_adv^t");
  const GradientMap grads = tape.backward(loss);
  auto params = dv.bindings(m.disc_image);
  auto more = dt.bindings(m.disc_text);
  params.insert(params.end(), more.begin(), more.end());
  sgd_step(params, grads, config_.lr, Direction::kDescent);
  return report;
}

void Trainer::consolidate() { state_.codes = consolidate_codes(state_.model, dataset_); }

EpochRecord Trainer::run_epoch() {
  const auto start = std::chrono::steady_clock::now();
  const std::vector<Batch> batches = next_batches();
  EpochRecord rec;
  rec.epoch = state_.epoch + 1;
  for (const Batch& b : batches) rec.label += label_phase(b);
  for (const Batch& b : batches) rec.image += image_phase(b);
  for (const Batch& b : batches) rec.text += text_phase(b);
  for (std::size_t it = 0; it < config_.inner_iters; ++it) {
    rec.adv_image = rec.adv_text = 0.0;
    for (const Batch& b : batches) {
      const AdversaryReport r = adversary_phase(b);
      rec.adv_image += r.image;
      rec.adv_text += r.text;
    }
  }
  consolidate();
  rec.totals = compose_totals(rec.label.total, rec.image.total, rec.text.total, rec.adv_image, rec.adv_text);
  rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  ++state_.epoch;
  state_.history.push_back(rec);
  if (observer_) observer_(rec);
  return rec;
}

const TrainState& Trainer::run() {
  while (state_.epoch < config_.epochs) run_epoch();
  return state_;
}

TrainState train(const Dataset& dataset, const TrainConfig& config, Trainer::EpochObserver observer) {
  Trainer trainer(dataset, config, std::move(observer));
  trainer.run();
  return trainer.state();
}

}  // namespace xmh
