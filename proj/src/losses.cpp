#include "selab/losses.hpp"

#include <cmath>
#include <limits>

#include "selab/error.hpp"
#include "selab/ops.hpp"

namespace selab::losses {

using namespace selab::ops;

void LossWeights::validate() const {
  for (auto [name, v] : {std::pair{"losses.lambda_embed", embed}, std::pair{"losses.lambda_adversarial", adversarial},
                         std::pair{"losses.lambda_triplet", triplet}, std::pair{"losses.lambda_output", output}})
    if (!(v >= 0) || !std::isfinite(v)) throw ConfigError(std::string(name) + ": must be a finite value >= 0");
  if (!(margin > 0) || !std::isfinite(margin)) throw ConfigError("losses.margin: must be > 0");
}

namespace {

template <typename T>
void require_same(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

}  // namespace

template <typename T>
Tensor<T> sisdr(const Tensor<T>& est, const Tensor<T>& ref) {
  require_same("sisdr", est, ref);
  if (ref.rank() != 2) throw ShapeError("sisdr: expected [B, samples], got " + to_string(ref.shape()));
  const std::int64_t n = ref.dim(1);
  for (std::int64_t b = 0; b < ref.dim(0); ++b) {
    double e = 0;
    for (std::int64_t i = 0; i < n; ++i) e += double(ref.at(b * n + i)) * ref.at(b * n + i);
    if (e == 0) throw Error("sisdr: reference row " + std::to_string(b) + " is silent");
  }
  // Energies are floored at eps rather than offset by it, so the value is
  // exactly scale invariant whenever they exceed the floor.
  const T eps = T(kSisdrEps), big = std::numeric_limits<T>::max();
  auto energy = [&](const Tensor<T>& x) { return clamp(sum_axis(square(x), 1), eps, big); };
  auto alpha = div(sum_axis(mul(est, ref), 1), energy(ref));
  auto target = mul_rows(ref, alpha);
  auto residual = sub(est, target);
  auto db = mul_scalar(log(div(energy(target), energy(residual))), T(10.0 / std::log(10.0)));
  return clamp(db, T(-kSisdrClampDb), T(kSisdrClampDb));
}

template <typename T>
Tensor<T> sisdr_loss(const Tensor<T>& est, const Tensor<T>& ref) {
  return neg(mean(sisdr(est, ref)));
}

template <typename T>
Tensor<T> mean_l1(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("mean_l1", a, b);
  return mean(abs(sub(a, b)));
}

template <typename T>
Tensor<T> mean_l2(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("mean_l2", a, b);
  return mean(square(sub(a, b)));
}

template <typename T>
Tensor<T> cosine_distance(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("cosine_distance", a, b);
  return add_scalar(neg(mean(cosine_similarity_last(a, b, T(1e-12)))), T(1));
}

template <typename T>
Linear<T>::Linear(std::int64_t in, std::int64_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(double(in));
  weight = uniform_tensor<T>({out, in}, rng, -bound, bound, true);
  bias = uniform_tensor<T>({out}, rng, -bound, bound, true);
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  return linear(x, weight, bias);
}

template <typename T>
Tensor<T> distill_embed(const Tensor<T>& bottleneck, const Tensor<T>& teacher, const Linear<T>& proj) {
  auto p = proj(bottleneck);
  if (p.shape() != teacher.shape())
    throw ShapeError("distill_embed: projected bottleneck " + to_string(p.shape()) + " vs teacher " +
                     to_string(teacher.shape()));
  return mean(abs(sub(p, teacher)));
}

template <typename T>
Discriminator<T>::Discriminator(std::int64_t dim, Rng& rng, std::int64_t width) {
  const std::int64_t chans[4] = {dim, width, width, 1};
  for (int l = 0; l < 3; ++l) {
    const double bound = 1.0 / std::sqrt(double(chans[l] * 3));
    weights_.push_back(uniform_tensor<T>({chans[l + 1], chans[l], 3, 1}, rng, -bound, bound, true));
    biases_.push_back(uniform_tensor<T>({chans[l + 1]}, rng, -bound, bound, true));
  }
}

template <typename T>
Tensor<T> Discriminator<T>::operator()(const Tensor<T>& x) const {
  if (x.rank() != 3 || x.dim(2) != weights_[0].dim(1))
    throw ShapeError("discriminator: expected [B, frames, " + std::to_string(weights_[0].dim(1)) + "], got " +
                     to_string(x.shape()));
  // [B, T, D] -> [B, D, T, 1]
  Tensor<T> h = reshape(permute(x, {0, 2, 1}), {x.dim(0), x.dim(2), x.dim(1), 1});
  for (int l = 0; l < 3; ++l) {
    Conv2dGeometry g;
    g.pad_t_front = 1;
    g.pad_t_back = 1;
    g.stride_t = l == 1 ? 2 : 1;
    h = conv2d(h, weights_[l], biases_[l], g);
    if (l < 2) h = leaky_relu(h, T(0.1));
  }
  return reshape(h, {h.dim(0), h.dim(2)});
}

template <typename T>
std::vector<Tensor<T>> Discriminator<T>::parameters() const {
  std::vector<Tensor<T>> out;
  for (int l = 0; l < 3; ++l) {
    out.push_back(weights_[l]);
    out.push_back(biases_[l]);
  }
  return out;
}

template <typename T>
std::vector<NamedTensor> Discriminator<T>::state_dict(const std::string& prefix) const {
  std::vector<NamedTensor> out;
  for (int l = 0; l < 3; ++l) {
    for (const auto& [suffix, t] : {std::pair{".weight", weights_[l]}, std::pair{".bias", biases_[l]}})
      out.push_back({prefix + "conv" + std::to_string(l + 1) + suffix, t.shape(),
                     std::vector<float>(t.data().begin(), t.data().end())});
  }
  return out;
}

template <typename T>
AdversarialLoss<T> adversarial(const Tensor<T>& fake, const Tensor<T>& real, const Discriminator<T>& disc) {
  require_same("adversarial", fake, real);
  AdversarialLoss<T> out;
  out.generator = mean(square(add_scalar(disc(fake), T(-1))));
  auto d_fake = mean(square(disc(fake.detach())));
  auto d_real = mean(square(add_scalar(disc(real), T(-1))));
  out.discriminator = mul_scalar(add(d_fake, d_real), T(0.5));
  return out;
}

template <typename T>
Tensor<T> triplet(const Tensor<T>& anchor, const Tensor<T>& positive, const Tensor<T>& negative, double margin) {
  require_same("triplet", anchor, positive);
  require_same("triplet", anchor, negative);
  if (!(margin > 0)) throw ConfigError("losses.margin: must be > 0");
  const T eps = T(1e-12);
  auto pos = l2_norm_last(sub(anchor, positive), eps);
  auto negd = l2_norm_last(sub(anchor, negative), eps);
  auto hinge = clamp(add_scalar(sub(pos, negd), T(margin)), T(0), std::numeric_limits<T>::max());
  return mean(hinge);
}

template <typename T>
Tensor<T> distill_output(const Tensor<T>& est, const Tensor<T>& ref, const EmbeddingFn<T>& teacher) {
  if (!teacher.differentiable)
    throw ConfigError("distill_output: teacher '" + teacher.name +
                      "' is not differentiable; output distillation backpropagates through the teacher");
  require_same("distill_output", est, ref);
  Tensor<T> target;
  {
    NoGradGuard no_grad;
    target = teacher.fn(ref.detach());
  }
  return mean_l1(teacher.fn(est), target);
}

#define SELAB_LOSSES(T)                                                                            \
  template Tensor<T> sisdr(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sisdr_loss(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> mean_l1(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mean_l2(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> cosine_distance(const Tensor<T>&, const Tensor<T>&);                          \
  template struct Linear<T>;                                                                       \
  template Tensor<T> distill_embed(const Tensor<T>&, const Tensor<T>&, const Linear<T>&);          \
  template class Discriminator<T>;                                                                 \
  template AdversarialLoss<T> adversarial(const Tensor<T>&, const Tensor<T>&, const Discriminator<T>&); \
  template Tensor<T> triplet(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);        \
  template Tensor<T> distill_output(const Tensor<T>&, const Tensor<T>&, const EmbeddingFn<T>&);

SELAB_LOSSES(float)
SELAB_LOSSES(double)

}  // namespace selab::losses
