#include "tripsim/proxy_model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tripsim/errors.hpp"
#include "tripsim/rng.hpp"

namespace tripsim {

namespace {
constexpr double kLogFloor = 1e-12;

void check_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw DomainError("temperature tau must be > 0");
}

std::vector<double> softmax(std::span<const double> logits) {
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    p[c] = std::exp(logits[c] - top);
    z += p[c];
  }
  for (double& v : p) v /= z;
  return p;
}

}  // namespace

FrozenTextHead::FrozenTextHead(Mat anchors, std::size_t prompt_tokens, std::uint64_t seed)
    : anchors_(std::move(anchors)), prompt_tokens_(prompt_tokens), seed_(seed) {
  if (anchors_.rows() < 1 || anchors_.cols() < 1) throw ConfigError("text head: empty anchor set");
  if (prompt_tokens_ < 1) throw ConfigError("text head: prompt_tokens must be >= 1");
  for (std::size_t c = 0; c < anchors_.rows(); ++c) {
    if (std::abs(norm(anchors_.row(c)) - 1.0) > 1e-9) {
      throw ConfigError("text head: anchor " + std::to_string(c) + " is not unit length");
    }
  }
  const std::size_t d = dims();
  const std::size_t width = prompt_tokens_ * d;
  Rng rng(seed);
  Rng proj_rng = rng.derive({1});
  Rng mask_rng = rng.derive({2});
  const double scale = 1.0 / std::sqrt(static_cast<double>(width));
  projection_ = Mat(d, width);
  for (double& v : projection_.flat()) v = proj_rng.normal() * scale;
  masks_ = Mat(classes(), width);
  for (double& v : masks_.flat()) v = mask_rng.below(2) == 0 ? -1.0 : 1.0;
}

void FrozenTextHead::check_prompt(const Mat& prompt) const {
  if (prompt.rows() != prompt_tokens_ || prompt.cols() != dims()) {
    throw StructuralError("prompt is " + std::to_string(prompt.rows()) + "x" +
                          std::to_string(prompt.cols()) + ", head expects " +
                          std::to_string(prompt_tokens_) + "x" + std::to_string(dims()));
  }
}

Vec FrozenTextHead::activation(std::size_t c, std::span<const double> flat_prompt) const {
  const std::size_t width = projection_.cols();
  const auto mask = masks_.row(c);
  Vec masked(width);
  for (std::size_t k = 0; k < width; ++k) masked[k] = mask[k] * flat_prompt[k];
  Vec a(anchors_.row(c).begin(), anchors_.row(c).end());
  for (std::size_t j = 0; j < dims(); ++j) a[j] += dot(projection_.row(j), masked);
  return a;
}

void FrozenTextHead::accumulate_transpose(std::size_t c, std::span<const double> grad,
                                          std::span<double> out) const {
  const std::size_t width = projection_.cols();
  Vec back(width, 0.0);
  for (std::size_t j = 0; j < dims(); ++j) {
    if (grad[j] != 0.0) axpy(grad[j], projection_.row(j), back);
  }
  const auto mask = masks_.row(c);
  for (std::size_t k = 0; k < width; ++k) out[k] += mask[k] * back[k];
}

TextFeatures text_features(const Mat& prompt, const FrozenTextHead& head) {
  head.check_prompt(prompt);
  TextFeatures tf;
  tf.features = Mat(head.classes(), head.dims());
  tf.norms.resize(head.classes());
  for (std::size_t c = 0; c < head.classes(); ++c) {
    Vec a = head.activation(c, prompt.flat());
    double n = norm(a);
    if (!(n > 0.0)) {
      const auto u = head.anchors().row(c);
      for (std::size_t j = 0; j < a.size(); ++j) a[j] = 1e-8 * u[j];
      n = norm(a);
      ++tf.perturbed;
    }
    tf.norms[c] = n;
    for (std::size_t j = 0; j < a.size(); ++j) tf.features(c, j) = a[j] / n;
  }
  return tf;
}

Vec image_feature(const Mat& tokens) { return normalize(row_mean(tokens)); }

std::vector<double> predict(const Mat& prompt, const FrozenTextHead& head,
                            std::span<const double> feature, double tau) {
  check_tau(tau);
  if (feature.size() != head.dims()) throw StructuralError("predict: feature dimension mismatch");
  const Vec f = normalize(feature);
  const TextFeatures tf = text_features(prompt, head);
  std::vector<double> logits(head.classes());
  for (std::size_t c = 0; c < head.classes(); ++c) logits[c] = dot(tf.features.row(c), f) / tau;
  return softmax(logits);
}

std::vector<double> zero_shot_reference(const FrozenTextHead& head, std::span<const double> feature,
                                        double tau) {
  check_tau(tau);
  if (feature.size() != head.dims()) throw StructuralError("zero_shot_reference: feature dimension mismatch");
  const Vec f = normalize(feature);
  std::vector<double> logits(head.classes());
  for (std::size_t c = 0; c < head.classes(); ++c) logits[c] = dot(head.anchors().row(c), f) / tau;
  return softmax(logits);
}

LossBreakdown loss(std::span<const double> probs_local, std::span<const double> probs_ref,
                   std::size_t label, double beta) {
  if (probs_local.size() != probs_ref.size()) throw StructuralError("loss: distribution sizes differ");
  if (label >= probs_local.size()) throw StructuralError("loss: label out of range");
  LossBreakdown out;
  out.beta = beta;
  double p_label = probs_local[label];
  if (p_label < kLogFloor) {
    p_label = kLogFloor;
    out.clamped = true;
  }
  out.ce = -std::log(p_label);
  double kl = 0.0;
  for (std::size_t c = 0; c < probs_ref.size(); ++c) {
    const double q = probs_ref[c];
    if (q <= 0.0) continue;
    double p = probs_local[c];
    if (p < kLogFloor) {
      p = kLogFloor;
      out.clamped = true;
    }
    kl += q * std::log(q / p);
  }
  out.kl = std::max(0.0, kl);
  out.total = out.ce + beta * out.kl;
  return out;
}

PromptEvaluation evaluate_prompt(const Mat& prompt, const FrozenTextHead& head,
                                 std::span<const double> feature, std::size_t label, double beta,
                                 double tau) {
  check_tau(tau);
  if (label >= head.classes()) throw StructuralError("evaluate_prompt: label out of range");
  if (feature.size() != head.dims()) throw StructuralError("evaluate_prompt: feature dimension mismatch");
  const Vec f = normalize(feature);
  const TextFeatures tf = text_features(prompt, head);
  const std::size_t classes = head.classes();
  const std::size_t d = head.dims();

  std::vector<double> logits(classes);
  for (std::size_t c = 0; c < classes; ++c) logits[c] = dot(tf.features.row(c), f) / tau;

  PromptEvaluation ev;
  ev.probs = softmax(logits);
  ev.reference = zero_shot_reference(head, feature, tau);
  ev.loss = loss(ev.probs, ev.reference, label, beta);

  // d total / d logit_c = (p - onehot) + beta * (p - p_ref)
  ev.grad_prompt = Mat(prompt.rows(), prompt.cols());
  Vec dw(d), da(d);
  for (std::size_t c = 0; c < classes; ++c) {
    const double dz = (ev.probs[c] - (c == label ? 1.0 : 0.0)) + beta * (ev.probs[c] - ev.reference[c]);
    if (dz == 0.0) continue;
    const auto w = tf.features.row(c);
    for (std::size_t j = 0; j < d; ++j) dw[j] = dz * f[j] / tau;
    // Jacobian of a / |a| is (I - w w^T) / |a|.
    const double radial = dot(w, dw);
    for (std::size_t j = 0; j < d; ++j) da[j] = (dw[j] - w[j] * radial) / tf.norms[c];
    head.accumulate_transpose(c, da, ev.grad_prompt.flat());
  }
  return ev;
}

ExpertSet gradients(std::span<const double> feature, std::size_t label, const ExpertSet& experts,
                    const RoutedPrompt& routed, const FrozenTextHead& head, double beta, double tau) {
  validate_experts(experts);
  if (routed.weights.size() != experts.size()) {
    throw StructuralError("gradients: routing weights do not match expert count");
  }
  if (!routed.prompt.same_shape(experts.front())) {
    throw StructuralError("gradients: routed prompt shape differs from experts");
  }
  const PromptEvaluation ev = evaluate_prompt(routed.prompt, head, feature, label, beta, tau);
  ExpertSet grads;
  grads.reserve(experts.size());
  for (std::size_t m = 0; m < experts.size(); ++m) {
    Mat g(experts[m].rows(), experts[m].cols());
    if (routed.weights[m] != 0.0) axpy(routed.weights[m], ev.grad_prompt.flat(), g.flat());
    grads.push_back(std::move(g));
  }
  return grads;
}

AdamWState AdamWState::zeros_like(const ExpertSet& experts) {
  AdamWState s;
  for (const Mat& e : experts) {
    s.first_moment.emplace_back(e.rows(), e.cols());
    s.second_moment.emplace_back(e.rows(), e.cols());
  }
  return s;
}

void adamw_step(ExpertSet& experts, const ExpertSet& grads, AdamWState& state, const AdamWConfig& cfg) {
  if (grads.size() != experts.size() || state.first_moment.size() != experts.size() ||
      state.second_moment.size() != experts.size()) {
    throw StructuralError("adamw_step: expert/gradient/state counts differ");
  }
  for (std::size_t m = 0; m < experts.size(); ++m) {
    if (!grads[m].same_shape(experts[m]) || !state.first_moment[m].same_shape(experts[m]) ||
        !state.second_moment[m].same_shape(experts[m])) {
      throw StructuralError("adamw_step: shape mismatch for expert " + std::to_string(m));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t m = 0; m < experts.size(); ++m) {
    auto p = experts[m].flat();
    const auto g = grads[m].flat();
    auto m1 = state.first_moment[m].flat();
    auto m2 = state.second_moment[m].flat();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * g[i];
      m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m1[i] / bc1;
      const double v_hat = m2[i] / bc2;
      p[i] -= cfg.lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * p[i]);
    }
  }
}

}  // namespace tripsim
