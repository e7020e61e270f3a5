#include "lht/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>

#include "lht/error.hpp"
#include "lht/parallel.hpp"
#include "lht/strategies.hpp"

namespace lht {
namespace {

double l2(std::span<const float> x) {
  double s = 0.0;
  for (float v : x) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

// Rows scaled to unit norm; zero rows stay zero.
Tensor unit_rows_or_zero(const Tensor& x) {
  Tensor out = x;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double n = l2(row);
    if (n > 0.0)
      for (auto& v : row) v = static_cast<float>(v / n);
  }
  return out;
}

double cosine(std::span<const float> a, std::span<const float> b) {
  const double na = l2(a), nb = l2(b);
  if (!(na > 0.0) || !(nb > 0.0)) return 0.0;
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += static_cast<double>(a[i]) * b[i];
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

std::size_t argmax_row(std::span<const float> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

bool has_both_pair_kinds(const PatchLabels& labels) {
  std::map<std::int32_t, std::size_t> counts;
  for (auto l : labels.labels)
    if (l != PatchLabels::kIgnore) ++counts[l];
  const bool cross = counts.size() >= 2;
  const bool same = std::any_of(counts.begin(), counts.end(),
                                [](const auto& kv) { return kv.second >= 2; });
  return cross && same;
}

void check_labels(const Tensor& features, const PatchLabels& labels) {
  if (features.rows() != labels.count())
    throw ShapeError("labels cover " + std::to_string(labels.count()) +
                     " patches, features have " + std::to_string(features.rows()));
}

// Fixed-resolution score histogram for pooling pairs across images. Counts
// are integers, so merge order does not affect the result.
constexpr std::size_t kPoolBins = 1U << 16;

std::size_t pool_bin(float score) {
  const double t = (std::clamp(static_cast<double>(score), -1.0, 1.0) + 1.0) / 2.0;
  return std::min(kPoolBins - 1, static_cast<std::size_t>(t * kPoolBins));
}

struct PooledAuc {
  std::vector<std::uint64_t> pos = std::vector<std::uint64_t>(kPoolBins, 0);
  std::vector<std::uint64_t> neg = std::vector<std::uint64_t>(kPoolBins, 0);

  double auc() const {
    // Pairs in the same bin count as ties.
    long double num = 0.0L;
    std::uint64_t neg_below = 0, npos = 0, nneg = 0;
    for (std::size_t b = 0; b < kPoolBins; ++b) {
      num += static_cast<long double>(pos[b]) * neg_below +
             0.5L * static_cast<long double>(pos[b]) * neg[b];
      neg_below += neg[b];
      npos += pos[b];
      nneg += neg[b];
    }
    if (npos == 0 || nneg == 0) return std::numeric_limits<double>::quiet_NaN();
    return static_cast<double>(num / (static_cast<long double>(npos) * nneg));
  }
};

}  // namespace

double hoyer_score(std::span<const float> x) {
  if (x.empty()) throw NumericError("hoyer_score: empty vector");
  double a1 = 0.0, a2 = 0.0;
  for (float v : x) {
    a1 += std::fabs(static_cast<double>(v));
    a2 += static_cast<double>(v) * v;
  }
  if (!(a2 > 0.0)) throw NumericError("hoyer_score: zero vector");
  const double root_d = std::sqrt(static_cast<double>(x.size()));
  if (x.size() == 1) return 1.0;
  const double h = (root_d - a1 / std::sqrt(a2)) / (root_d - 1.0);
  return std::clamp(h, 0.0, 1.0);
}

std::vector<std::size_t> detect_abnormal_rows(const Tensor& tokens,
                                              std::size_t row_offset,
                                              std::size_t count,
                                              const AbnormalCriterion& criterion) {
  criterion.validate();
  if (tokens.rows() < row_offset + count)
    throw ShapeError("detect_abnormal: row range outside the token matrix");
  std::vector<std::size_t> out;
  for (std::size_t p = 0; p < count; ++p) {
    auto row = tokens.row(row_offset + p);
    const double norm = l2(row);
    if (!(norm > 0.0)) continue;
    const double score =
        criterion.kind == DetectionKind::sparsity ? hoyer_score(row) : norm;
    if (score > criterion.threshold) out.push_back(p);
  }
  return out;
}

std::vector<std::size_t> detect_abnormal(const TokenSequence& x,
                                         const AbnormalCriterion& criterion) {
  x.check();
  return detect_abnormal_rows(x.tokens, 1, x.patch_count(), criterion);
}

std::optional<AbnormalStats> replace_stats(
    const std::vector<AbnormalObservation>& observations) {
  std::vector<std::span<const float>> pooled;
  double to_cls = 0.0, to_normal = 0.0;
  std::size_t normal_refs = 0;
  for (const auto& obs : observations) {
    if (obs.positions.empty()) continue;
    obs.tokens.check();
    const auto hw = obs.tokens.patch_count();
    std::vector<bool> flagged(hw, false);
    for (auto p : obs.positions) {
      if (p >= hw) throw ShapeError("replace_stats: position outside the grid");
      flagged[p] = true;
    }
    std::vector<double> normal_mean(obs.tokens.width(), 0.0);
    std::size_t normals = 0;
    for (std::size_t p = 0; p < hw; ++p) {
      if (flagged[p]) continue;
      auto row = obs.tokens.patch(p);
      for (std::size_t k = 0; k < row.size(); ++k) normal_mean[k] += row[k];
      ++normals;
    }
    std::vector<float> mean_f(normal_mean.size());
    for (std::size_t k = 0; k < mean_f.size(); ++k)
      mean_f[k] = normals ? static_cast<float>(normal_mean[k] / normals) : 0.0F;
    for (auto p : obs.positions) {
      pooled.push_back(obs.tokens.patch(p));
      to_cls += cosine(obs.tokens.patch(p), obs.tokens.cls());
      if (normals) {
        to_normal += cosine(obs.tokens.patch(p), mean_f);
        ++normal_refs;
      }
    }
  }
  if (pooled.size() < 2) return std::nullopt;
  AbnormalStats s;
  s.tokens = pooled.size();
  double sum = 0.0, mn = 1.0;
  for (std::size_t i = 0; i < pooled.size(); ++i)
    for (std::size_t j = i + 1; j < pooled.size(); ++j) {
      const double c = cosine(pooled[i], pooled[j]);
      sum += c;
      mn = std::min(mn, c);
      ++s.pairs;
    }
  s.mean_cosine = sum / static_cast<double>(s.pairs);
  s.min_cosine = mn;
  s.mean_cosine_to_cls = to_cls / static_cast<double>(pooled.size());
  s.mean_cosine_to_normal_mean =
      normal_refs ? to_normal / static_cast<double>(normal_refs) : 0.0;
  return s;
}

PatchLabels patch_labels_from_pixels(const ClassMap& gt, int patch_size,
                                     std::int32_t ignore_index) {
  if (patch_size <= 0 || gt.height % patch_size != 0 || gt.width % patch_size != 0)
    throw DataError("label map " + std::to_string(gt.height) + "x" +
                    std::to_string(gt.width) + " is not a multiple of the patch size");
  PatchLabels out;
  out.grid_h = gt.height / patch_size;
  out.grid_w = gt.width / patch_size;
  out.labels.resize(static_cast<std::size_t>(out.grid_h) * out.grid_w);
  std::map<std::int32_t, int> votes;
  for (int gy = 0; gy < out.grid_h; ++gy)
    for (int gx = 0; gx < out.grid_w; ++gx) {
      votes.clear();
      for (int y = 0; y < patch_size; ++y)
        for (int x = 0; x < patch_size; ++x)
          ++votes[gt.at(gy * patch_size + y, gx * patch_size + x)];
      // std::map iterates ascending, so strict > keeps the lowest on ties.
      std::int32_t best = 0;
      int best_count = -1;
      for (const auto& [label, n] : votes)
        if (n > best_count) {
          best = label;
          best_count = n;
        }
      out.labels[static_cast<std::size_t>(gy) * out.grid_w + gx] =
          (best == ignore_index || best < 0) ? PatchLabels::kIgnore : best;
    }
  return out;
}

double auc_rank(std::span<const float> scores, const std::vector<bool>& positive) {
  const std::size_t n = scores.size();
  if (positive.size() != n) throw ShapeError("auc_rank: length mismatch");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the mean rank of a tie block [a, b) is (a + 1) + b.
  std::uint64_t rank_sum_x2 = 0, npos = 0;
  for (std::size_t a = 0; a < n;) {
    std::size_t b = a + 1;
    while (b < n && scores[order[b]] == scores[order[a]]) ++b;
    for (std::size_t i = a; i < b; ++i)
      if (positive[order[i]]) {
        rank_sum_x2 += a + 1 + b;
        ++npos;
      }
    a = b;
  }
  const std::uint64_t nneg = n - npos;
  if (npos == 0 || nneg == 0)
    throw DataError("AUC undefined: need both positive and negative pairs");
  const std::uint64_t u_x2 = rank_sum_x2 - npos * (npos + 1);
  return static_cast<double>(u_x2) / (2.0 * static_cast<double>(npos) *
                                      static_cast<double>(nneg));
}

double auc_brute_force(std::span<const float> scores,
                       const std::vector<bool>& positive) {
  if (positive.size() != scores.size())
    throw ShapeError("auc_brute_force: length mismatch");
  std::uint64_t count_x2 = 0, npos = 0, nneg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!positive[i]) {
      ++nneg;
      continue;
    }
    ++npos;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (positive[j]) continue;
      if (scores[i] > scores[j])
        count_x2 += 2;
      else if (scores[i] == scores[j])
        count_x2 += 1;
    }
  }
  if (npos == 0 || nneg == 0)
    throw DataError("AUC undefined: need both positive and negative pairs");
  return static_cast<double>(count_x2) /
         (2.0 * static_cast<double>(npos) * static_cast<double>(nneg));
}

PairScores pair_scores(const Tensor& features, const PatchLabels& labels) {
  check_labels(features, labels);
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < labels.count(); ++i)
    if (labels.labels[i] != PatchLabels::kIgnore) kept.push_back(i);
  const Tensor unit = unit_rows_or_zero(features);
  PairScores out;
  const auto pairs = kept.size() * (kept.size() - (kept.empty() ? 0 : 1)) / 2;
  out.scores.reserve(pairs);
  out.same.reserve(pairs);
  const auto d = unit.cols();
  for (std::size_t a = 0; a < kept.size(); ++a) {
    auto ra = unit.row(kept[a]);
    for (std::size_t b = a + 1; b < kept.size(); ++b) {
      auto rb = unit.row(kept[b]);
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += static_cast<double>(ra[k]) * rb[k];
      out.scores.push_back(static_cast<float>(std::clamp(dot, -1.0, 1.0)));
      out.same.push_back(labels.labels[kept[a]] == labels.labels[kept[b]]);
    }
  }
  return out;
}

double discriminability_auc(const Tensor& features, const PatchLabels& labels) {
  check_labels(features, labels);
  if (!has_both_pair_kinds(labels))
    throw DataError("degenerate labelling: need same-class and cross-class pairs");
  const PairScores ps = pair_scores(features, labels);
  return auc_rank(ps.scores, ps.same);
}

double alignment_accuracy(const TokenSequence& x, const VitModel& model,
                          const TextEmbeddings& text, const PatchLabels& labels,
                          int threads) {
  if (x.layer >= model.config.layers)
    throw ConfigError("alignment_accuracy needs tokens from a layer below L");
  const Tensor feats = project(
      final_layer_features(x, model, FinalVariant::identity, threads), model, threads);
  check_labels(feats, labels);
  const Tensor logits = cosine_rows(feats, text.matrix);
  std::size_t total = 0, correct = 0;
  for (std::size_t i = 0; i < labels.count(); ++i) {
    const auto l = labels.labels[i];
    if (l == PatchLabels::kIgnore) continue;
    if (l < 0 || static_cast<std::size_t>(l) >= text.classes())
      throw DataError("label " + std::to_string(l) + " has no text embedding");
    ++total;
    if (argmax_row(logits.row(i)) == static_cast<std::size_t>(l)) ++correct;
  }
  if (total == 0) throw DataError("alignment_accuracy: no labelled patches");
  return static_cast<double>(correct) / static_cast<double>(total);
}

std::map<HeadId, double> head_aucs(const LabeledSample& sample,
                                   const VitModel& model,
                                   const HeadRankingOptions& opts) {
  std::map<HeadId, double> out;
  if (!has_both_pair_kinds(sample.labels)) return out;
  std::vector<int> all_heads(static_cast<std::size_t>(model.config.heads));
  std::iota(all_heads.begin(), all_heads.end(), 1);
  TokenSequence x = tokenize(sample.image, model);
  if (static_cast<std::size_t>(x.grid_h) * x.grid_w != sample.labels.count())
    throw DataError("patch labels do not match the image grid");
  for (int l = 1; l <= model.config.layers - 1; ++l) {
    LayerRecord rec = layer_forward_recorded(x, model, l, LayerMode::standard(),
                                             all_heads);
    for (auto& hf : rec.heads) {
      if (opts.apply_atr) {
        const auto flagged =
            detect_abnormal_rows(hf.features, 1, x.patch_count(), opts.criterion);
        atr_rows(hf.features, 1, x.grid_h, x.grid_w, flagged);
      }
      out[{hf.layer, hf.head}] = discriminability_auc(
          hf.features.slice_rows(1, x.patch_count()), sample.labels);
    }
    x = std::move(rec.output);
  }
  return out;
}

std::vector<HeadScore> aggregate_head_scores(
    const std::vector<std::pair<std::string, std::map<HeadId, double>>>& per_image) {
  // dataset → head → (sum, count)
  std::map<std::string, std::map<HeadId, std::pair<double, std::size_t>>> sums;
  for (const auto& [dataset, aucs] : per_image)
    for (const auto& [id, auc] : aucs) {
      auto& slot = sums[dataset][id];
      slot.first += auc;
      ++slot.second;
    }
  std::map<HeadId, HeadScore> scores;
  for (const auto& [dataset, heads] : sums)
    for (const auto& [id, sc] : heads) {
      auto& s = scores[id];
      s.id = id;
      s.dataset_auc[dataset] = sc.first / static_cast<double>(sc.second);
    }
  std::vector<HeadScore> out;
  for (auto& [id, s] : scores) {
    double total = 0.0;
    for (const auto& [ds, v] : s.dataset_auc) total += v;
    s.mean_auc = total / static_cast<double>(s.dataset_auc.size());
    out.push_back(std::move(s));
  }
  std::stable_sort(out.begin(), out.end(), [](const HeadScore& a, const HeadScore& b) {
    return a.mean_auc > b.mean_auc;
  });
  return out;
}

std::vector<HeadScore> rank_heads(const std::vector<LabeledSample>& samples,
                                  const VitModel& model,
                                  const HeadRankingOptions& opts) {
  if (samples.empty()) throw DataError("rank_heads: empty sample set");
  std::vector<std::pair<std::string, std::map<HeadId, double>>> per_image(samples.size());
  parallel_for(samples.size(), opts.threads, [&](std::size_t i) {
    per_image[i] = {samples[i].dataset, head_aucs(samples[i], model, opts)};
  });
  auto ranked = aggregate_head_scores(per_image);
  if (ranked.empty())
    throw DataError("rank_heads: every sample has a degenerate labelling");
  return ranked;
}

DiscriminabilityReport analyze_layers(const std::vector<LabeledSample>& samples,
                                      const VitModel& model,
                                      const TextEmbeddings* text, int threads) {
  if (samples.empty()) throw DataError("analyze_layers: empty sample set");
  const int layers = model.config.layers - 1;
  const auto nl = static_cast<std::size_t>(layers);
  struct PerSample {
    std::vector<double> auc;    // NaN when degenerate
    std::vector<double> align;  // NaN when unlabelled
  };
  std::vector<PerSample> per(samples.size());
  std::vector<PooledAuc> pooled(nl);
  std::mutex pool_mutex;

  parallel_for(samples.size(), threads, [&](std::size_t i) {
    const auto& s = samples[i];
    PerSample r;
    r.auc.assign(nl, std::numeric_limits<double>::quiet_NaN());
    r.align.assign(nl, std::numeric_limits<double>::quiet_NaN());
    const bool scorable = has_both_pair_kinds(s.labels);
    const bool labelled = std::any_of(s.labels.labels.begin(), s.labels.labels.end(),
                                      [](auto l) { return l != PatchLabels::kIgnore; });
    TokenSequence x = tokenize(s.image, model);
    if (x.patch_count() != s.labels.count())
      throw DataError("patch labels do not match the image grid");
    std::vector<std::vector<std::size_t>> pos_bins(nl), neg_bins(nl);
    for (int l = 1; l <= layers; ++l) {
      x = layer_forward(x, model, l);
      const auto li = static_cast<std::size_t>(l - 1);
      if (scorable) {
        const PairScores ps = pair_scores(x.patches(), s.labels);
        r.auc[li] = auc_rank(ps.scores, ps.same);
        for (std::size_t k = 0; k < ps.scores.size(); ++k)
          (ps.same[k] ? pos_bins : neg_bins)[li].push_back(pool_bin(ps.scores[k]));
      }
      if (text && labelled)
        r.align[li] = alignment_accuracy(x, model, *text, s.labels);
    }
    {
      std::lock_guard<std::mutex> lock(pool_mutex);
      for (std::size_t li = 0; li < nl; ++li) {
        for (auto b : pos_bins[li]) ++pooled[li].pos[b];
        for (auto b : neg_bins[li]) ++pooled[li].neg[b];
      }
    }
    per[i] = std::move(r);
  });

  DiscriminabilityReport rep;
  rep.samples = samples.size();
  const auto mean_of = [&](auto member, std::size_t li) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : per) {
      const double v = (r.*member)[li];
      if (!std::isnan(v)) {
        sum += v;
        ++n;
      }
    }
    return n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
  };
  for (std::size_t li = 0; li < nl; ++li) {
    rep.layer_auc.push_back(mean_of(&PerSample::auc, li));
    rep.layer_auc_pooled.push_back(pooled[li].auc());
    if (text) rep.layer_alignment.push_back(mean_of(&PerSample::align, li));
  }
  return rep;
}

}  // namespace lht
