#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tripsim/router.hpp"
#include "tripsim/tensor.hpp"

namespace tripsim {

/// Frozen stand-in for the text encoder.
///
/// Class c maps a flattened prompt e (L*D values) to the unit vector
///   w_c = normalize(T (s_c * e) + u_c)
/// where T is one shared D x (L*D) Gaussian projection with entries of variance
/// 1/(L*D), s_c is a per-class +-1 mask over the prompt coordinates and u_c is
/// the class anchor. The zero prompt therefore yields the anchors themselves.
class FrozenTextHead {
 public:
  FrozenTextHead(Mat anchors, std::size_t prompt_tokens, std::uint64_t seed);

  std::size_t classes() const noexcept { return anchors_.rows(); }
  std::size_t dims() const noexcept { return anchors_.cols(); }
  std::size_t prompt_tokens() const noexcept { return prompt_tokens_; }
  std::uint64_t seed() const noexcept { return seed_; }

  const Mat& anchors() const noexcept { return anchors_; }
  const Mat& projection() const noexcept { return projection_; }
  std::span<const double> class_mask(std::size_t c) const { return masks_.row(c); }

  /// T (s_c * prompt) + u_c, before normalisation.
  Vec activation(std::size_t c, std::span<const double> flat_prompt) const;

  /// out += s_c * (T^T grad), for grad of length D.
  void accumulate_transpose(std::size_t c, std::span<const double> grad, std::span<double> out) const;

  void check_prompt(const Mat& prompt) const;

 private:
  Mat anchors_;
  std::size_t prompt_tokens_;
  std::uint64_t seed_;
  Mat projection_;
  Mat masks_;
};

struct TextFeatures {
  Mat features;                ///< C x D, unit rows
  std::vector<double> norms;   ///< pre-normalisation lengths
  std::size_t perturbed = 0;   ///< rows that hit the zero-activation fallback
};

/// Per-class text features for a prompt. A zero activation is replaced by
/// 1e-8 * u_c before normalising and counted in `perturbed`.
TextFeatures text_features(const Mat& prompt, const FrozenTextHead& head);

/// Image-feature proxy: normalised mean of the image's tokens.
Vec image_feature(const Mat& tokens);

/// Softmax of cosine(w_c, f) / tau with max subtraction.
std::vector<double> predict(const Mat& prompt, const FrozenTextHead& head,
                            std::span<const double> feature, double tau);

/// predict() at the fixed all-zero reference prompt.
std::vector<double> zero_shot_reference(const FrozenTextHead& head, std::span<const double> feature,
                                        double tau);

struct LossBreakdown {
  double ce = 0.0;
  double kl = 0.0;
  double total = 0.0;
  double beta = 0.0;
  bool clamped = false;  ///< a probability hit the 1e-12 floor inside a log
};

/// ce = -log p_local[label]; kl = sum_c p_ref[c] log(p_ref[c] / p_local[c]);
/// total = ce + beta * kl.
LossBreakdown loss(std::span<const double> probs_local, std::span<const double> probs_ref,
                   std::size_t label, double beta);

/// Forward and backward pass of the combined loss for one synthesized prompt.
struct PromptEvaluation {
  std::vector<double> probs;
  std::vector<double> reference;
  LossBreakdown loss;
  Mat grad_prompt;  ///< d total / d prompt, L x D
};

PromptEvaluation evaluate_prompt(const Mat& prompt, const FrozenTextHead& head,
                                 std::span<const double> feature, std::size_t label, double beta,
                                 double tau);

/// d total / d expert_m = pi_m * d total / d prompt; routing weights are constants.
ExpertSet gradients(std::span<const double> feature, std::size_t label, const ExpertSet& experts,
                    const RoutedPrompt& routed, const FrozenTextHead& head, double beta, double tau);

struct AdamWConfig {
  double lr = 4e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamWState {
  ExpertSet first_moment;
  ExpertSet second_moment;
  std::uint64_t step = 0;

  static AdamWState zeros_like(const ExpertSet& experts);
};

/// Decoupled weight decay:
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
void adamw_step(ExpertSet& experts, const ExpertSet& grads, AdamWState& state, const AdamWConfig& cfg);

}  // namespace tripsim
