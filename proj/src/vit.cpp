#include "lht/vit.hpp"

#include <algorithm>
#include <cmath>

#include "lht/error.hpp"

namespace lht {
namespace {

const LayerWeights& layer_weights(const VitModel& model, int layer) {
  if (layer < 1 || layer > model.config.layers)
    throw ConfigError("layer " + std::to_string(layer) + " outside [1, " +
                      std::to_string(model.config.layers) + "]");
  return model.weights.layers[static_cast<std::size_t>(layer - 1)];
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b, int threads) {
  Tensor y = matmul(x, w, threads);
  add_row_bias(y, b);
  return y;
}

Tensor column_block(const Tensor& x, std::size_t first, std::size_t count) {
  Tensor out({x.rows(), count});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto src = x.row(r).subspan(first, count);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

void scale_in_place(Tensor& t, float s) {
  for (auto& v : t.data()) v *= s;
}

Tensor attention_scores(const Tensor& a, const Tensor& b, float scale,
                        int threads) {
  Tensor s = matmul_bt(a, b, threads);
  scale_in_place(s, scale);
  return row_softmax(s);
}

// a·x + b·y elementwise; with a = b = 1 this is exactly x + y.
Tensor weighted_sum(const Tensor& x, float a, const Tensor& y, float b) {
  if (x.shape() != y.shape()) throw ShapeError("weighted_sum: shape mismatch");
  Tensor out(x.shape());
  auto o = out.data();
  auto xs = x.data();
  auto ys = y.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a * xs[i] + b * ys[i];
  require_finite(o, "residual update");
  return out;
}

double cubic_weight(double t, int tap) {
  constexpr double A = -0.75;
  switch (tap) {
    case 0: {
      const double x = t + 1.0;
      return ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A;
    }
    case 1:
      return ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0;
    case 2: {
      const double x = 1.0 - t;
      return ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0;
    }
    default: {
      const double x = 2.0 - t;
      return ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A;
    }
  }
}

}  // namespace

void TokenSequence::check() const {
  if (grid_h <= 0 || grid_w <= 0)
    throw ShapeError("token grid extents must be positive");
  if (tokens.rank() != 2 || tokens.rows() != 1 + patch_count())
    throw ShapeError("token matrix " + shape_string(tokens.shape()) +
                     " does not hold 1 + " + std::to_string(grid_h) + "x" +
                     std::to_string(grid_w) + " tokens");
}

MsaResult msa_forward(const Tensor& normed, const LayerWeights& lw,
                      const VitConfig& cfg, const MsaOptions& opts) {
  const auto n = normed.rows();
  const auto d = static_cast<std::size_t>(cfg.width);
  const auto heads = cfg.heads;
  const auto dh = static_cast<std::size_t>(cfg.head_dim());
  if (normed.cols() != d)
    throw ShapeError("msa_forward: token width " + std::to_string(normed.cols()) +
                     " vs model width " + std::to_string(d));
  std::vector<bool> capture(static_cast<std::size_t>(heads), false);
  for (int h : opts.capture_heads) {
    if (h < 1 || h > heads)
      throw ConfigError("head " + std::to_string(h) + " outside [1, " +
                        std::to_string(heads) + "]");
    capture[static_cast<std::size_t>(h - 1)] = true;
  }
  const float scale = 1.0F / std::sqrt(static_cast<float>(dh));

  Tensor q, k;
  if (opts.kind != AttentionKind::identity) {
    q = linear(normed, lw.q_weight, lw.q_bias, opts.threads);
    k = linear(normed, lw.k_weight, lw.k_bias, opts.threads);
  }
  const Tensor v = linear(normed, lw.v_weight, lw.v_bias, opts.threads);

  MsaResult result;
  Tensor concat({n, d});
  for (int h = 0; h < heads; ++h) {
    const std::size_t first = static_cast<std::size_t>(h) * dh;
    const Tensor vh = column_block(v, first, dh);
    Tensor oh;
    Tensor attn;
    switch (opts.kind) {
      case AttentionKind::identity:
        oh = vh;
        break;
      case AttentionKind::standard: {
        attn = attention_scores(column_block(q, first, dh),
                                column_block(k, first, dh), scale, opts.threads);
        oh = matmul(attn, vh, opts.threads);
        break;
      }
      case AttentionKind::qq_kk: {
        const Tensor qh = column_block(q, first, dh);
        const Tensor kh = column_block(k, first, dh);
        attn = weighted_sum(attention_scores(qh, qh, scale, opts.threads), 1.0F,
                            attention_scores(kh, kh, scale, opts.threads), 1.0F);
        oh = matmul(attn, vh, opts.threads);
        break;
      }
    }
    for (std::size_t r = 0; r < n; ++r) {
      auto src = oh.row(r);
      std::copy(src.begin(), src.end(), concat.row(r).begin() + static_cast<std::ptrdiff_t>(first));
    }
    if (capture[static_cast<std::size_t>(h)]) {
      HeadFeature hf;
      hf.layer = opts.layer;
      hf.head = h + 1;
      hf.features = matmul(oh, lw.out_weight.slice_rows(first, dh), opts.threads);
      result.heads.push_back(std::move(hf));
    }
    if (opts.keep_attention) {
      if (attn.empty()) {
        attn = Tensor({n, n});
        for (std::size_t i = 0; i < n; ++i) attn.at(i, i) = 1.0F;
      }
      result.attention.push_back(std::move(attn));
    }
  }
  result.output = linear(concat, lw.out_weight, lw.out_bias, opts.threads);
  return result;
}

Tensor ffn_forward(const Tensor& normed, const LayerWeights& lw,
                   const VitConfig& cfg, int threads) {
  Tensor hidden = linear(normed, lw.fc1_weight, lw.fc1_bias, threads);
  hidden = cfg.activation == Activation::gelu ? gelu(hidden) : quick_gelu(hidden);
  return linear(hidden, lw.fc2_weight, lw.fc2_bias, threads);
}

LayerMode LayerMode::reweighted(float alpha) {
  if (!(alpha >= 0.0F && alpha <= 1.0F))
    throw ConfigError("reweighting alpha must lie in [0, 1], got " +
                      std::to_string(alpha));
  return {true, alpha};
}

LayerRecord layer_forward_recorded(const TokenSequence& x, const VitModel& model,
                                   int layer, LayerMode mode,
                                   const std::vector<int>& capture_heads,
                                   bool keep_attention, int threads) {
  x.check();
  if (mode.ssr && !(mode.alpha >= 0.0F && mode.alpha <= 1.0F))
    throw ConfigError("reweighting alpha must lie in [0, 1]");
  const VitConfig& cfg = model.config;
  const LayerWeights& lw = layer_weights(model, layer);
  const float keep = mode.ssr ? 1.0F + mode.alpha : 1.0F;
  const float branch = mode.ssr ? 1.0F - mode.alpha : 1.0F;

  MsaOptions opts;
  opts.capture_heads = capture_heads;
  opts.keep_attention = keep_attention;
  opts.layer = layer;
  opts.threads = threads;
  MsaResult msa = msa_forward(layer_norm(x.tokens, lw.ln1_gain, lw.ln1_bias, cfg.ln_eps),
                              lw, cfg, opts);
  const Tensor mid = weighted_sum(x.tokens, keep, msa.output, branch);
  const Tensor ffn = ffn_forward(layer_norm(mid, lw.ln2_gain, lw.ln2_bias, cfg.ln_eps),
                                 lw, cfg, threads);
  LayerRecord rec;
  rec.output = {weighted_sum(mid, keep, ffn, branch), x.grid_h, x.grid_w, layer};
  rec.heads = std::move(msa.heads);
  rec.attention = std::move(msa.attention);
  return rec;
}

TokenSequence layer_forward(const TokenSequence& x, const VitModel& model,
                            int layer, LayerMode mode, int threads) {
  return layer_forward_recorded(x, model, layer, mode, {}, false, threads).output;
}

const char* variant_name(FinalVariant v) {
  switch (v) {
    case FinalVariant::vanilla: return "vanilla";
    case FinalVariant::identity: return "identity_no_ffn_no_residual";
    case FinalVariant::sclip_qqkk: return "sclip_qqkk";
    case FinalVariant::clearclip: return "clearclip";
  }
  return "?";
}

FinalVariant parse_variant(const std::string& name) {
  for (auto v : {FinalVariant::vanilla, FinalVariant::identity,
                 FinalVariant::sclip_qqkk, FinalVariant::clearclip})
    if (name == variant_name(v)) return v;
  if (name == "identity" || name == "maskclip") return FinalVariant::identity;
  if (name == "sclip") return FinalVariant::sclip_qqkk;
  throw ConfigError("unknown final-layer variant '" + name + "'");
}

Tensor final_layer_features(const TokenSequence& x, const VitModel& model,
                            FinalVariant variant, int threads) {
  x.check();
  const int last = model.config.layers;
  if (variant == FinalVariant::vanilla)
    return layer_forward(x, model, last, LayerMode::standard(), threads).patches();

  const LayerWeights& lw = layer_weights(model, last);
  MsaOptions opts;
  opts.threads = threads;
  opts.layer = last;
  switch (variant) {
    case FinalVariant::identity: opts.kind = AttentionKind::identity; break;
    case FinalVariant::sclip_qqkk: opts.kind = AttentionKind::qq_kk; break;
    case FinalVariant::clearclip: opts.kind = AttentionKind::standard; break;
    case FinalVariant::vanilla: break;
  }
  const Tensor normed =
      layer_norm(x.tokens, lw.ln1_gain, lw.ln1_bias, model.config.ln_eps);
  return msa_forward(normed, lw, model.config, opts)
      .output.slice_rows(1, x.patch_count());
}

Tensor project(const Tensor& features, const VitModel& model, int threads) {
  const auto& w = model.weights;
  return matmul(layer_norm(features, w.post_norm_gain, w.post_norm_bias,
                           model.config.ln_eps),
                w.projection, threads);
}

Tensor interpolate_positions(const Tensor& positional, int native_grid,
                             int grid_h, int grid_w) {
  const auto d = positional.cols();
  const auto g = static_cast<std::size_t>(native_grid);
  if (positional.rows() != 1 + g * g)
    throw ShapeError("positional embedding does not match the native grid");
  if (grid_h == native_grid && grid_w == native_grid) return positional;

  Tensor out({1 + static_cast<std::size_t>(grid_h) * grid_w, d});
  std::copy(positional.row(0).begin(), positional.row(0).end(), out.row(0).begin());
  const double sy = static_cast<double>(native_grid) / grid_h;
  const double sx = static_cast<double>(native_grid) / grid_w;
  const auto clampi = [&](long i) {
    return static_cast<std::size_t>(std::clamp<long>(i, 0, native_grid - 1));
  };
  std::vector<double> acc(d);
  for (int oy = 0; oy < grid_h; ++oy) {
    const double fy = (oy + 0.5) * sy - 0.5;
    const long iy = static_cast<long>(std::floor(fy));
    const double ty = fy - static_cast<double>(iy);
    for (int ox = 0; ox < grid_w; ++ox) {
      const double fx = (ox + 0.5) * sx - 0.5;
      const long ix = static_cast<long>(std::floor(fx));
      const double tx = fx - static_cast<double>(ix);
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int a = 0; a < 4; ++a) {
        const double wy = cubic_weight(ty, a);
        const auto ry = clampi(iy - 1 + a);
        for (int b = 0; b < 4; ++b) {
          const double w = wy * cubic_weight(tx, b);
          auto src = positional.row(1 + ry * g + clampi(ix - 1 + b));
          for (std::size_t j = 0; j < d; ++j) acc[j] += w * src[j];
        }
      }
      auto dst = out.row(1 + static_cast<std::size_t>(oy) * grid_w + ox);
      for (std::size_t j = 0; j < d; ++j) dst[j] = static_cast<float>(acc[j]);
    }
  }
  return out;
}

TokenSequence tokenize(const Image& image, const VitModel& model, int threads) {
  const VitConfig& cfg = model.config;
  const int p = cfg.patch_size;
  if (image.height <= 0 || image.width <= 0 || image.height % p != 0 ||
      image.width % p != 0)
    throw ShapeError("image " + std::to_string(image.height) + "x" +
                     std::to_string(image.width) +
                     " is not divisible into " + std::to_string(p) + "px patches");
  const int gh = image.height / p, gw = image.width / p;
  const auto hw = static_cast<std::size_t>(gh) * gw;
  const auto pp = static_cast<std::size_t>(p) * p;

  Tensor patches({hw, 3 * pp});
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      auto row = patches.row(static_cast<std::size_t>(gy) * gw + gx);
      for (int c = 0; c < 3; ++c)
        for (int dy = 0; dy < p; ++dy)
          for (int dx = 0; dx < p; ++dx) {
            const float v = image.at(gy * p + dy, gx * p + dx, c);
            row[static_cast<std::size_t>(c) * pp + static_cast<std::size_t>(dy) * p + dx] =
                (v - cfg.image_mean[static_cast<std::size_t>(c)]) /
                cfg.image_std[static_cast<std::size_t>(c)];
          }
    }
  require_finite(patches.data(), "tokenize input");
  Tensor embedded = matmul_bt(patches, model.weights.patch_weight, threads);
  add_row_bias(embedded, model.weights.patch_bias);

  const Tensor pos = interpolate_positions(model.weights.positional_embedding,
                                           cfg.native_grid(), gh, gw);
  const auto d = static_cast<std::size_t>(cfg.width);
  Tensor tokens({1 + hw, d});
  for (std::size_t j = 0; j < d; ++j)
    tokens.at(0, j) = model.weights.class_embedding[j] + pos.at(0, j);
  for (std::size_t r = 0; r < hw; ++r)
    for (std::size_t j = 0; j < d; ++j)
      tokens.at(r + 1, j) = embedded.at(r, j) + pos.at(r + 1, j);
  if (cfg.pre_norm)
    tokens = layer_norm(tokens, model.weights.pre_norm_gain,
                        model.weights.pre_norm_bias, cfg.ln_eps);
  return {std::move(tokens), gh, gw, 0};
}

}  // namespace lht
