#pragma once
// Cross-implementation parity against a reference activation file.
//
// A probe is an `.lhtw` container holding:
//   "image"      [H, W, 3]   input pixels in [0, 1] (before mean/std)
//   "layer_{l}"  [1+h·w, D]  token outputs X^l for l = 0..L (0 = embeddings)
//   "features"   [h·w, P]    optional: projected patch features of a plain
//                            forward
// Missing layers are skipped; at least one layer must be present.

#include <map>
#include <string>

#include "lht/container.hpp"
#include "lht/vit.hpp"

namespace lht {

struct ParityReport {
  std::map<std::string, double> deviation;  // tensor name → max rel deviation
  double worst = 0.0;
  bool passed(double tolerance) const { return worst <= tolerance; }
};

/// max |a − b| / max |b| over all elements.
double max_relative_deviation(const Tensor& a, const Tensor& reference);

ParityReport check_parity(const VitModel& model, const Container& probe, int threads = 1);

/// Writes a probe from this engine's own forward pass (test fixture and
/// format reference).
Container make_probe(const VitModel& model, const Image& image, int threads = 1);

}  // namespace lht
