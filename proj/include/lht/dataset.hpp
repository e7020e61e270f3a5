#pragma once
// Sample lists: one "image [label [dataset]]" per line, '#' starts a comment.
// Relative paths resolve against the list file's directory.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lht/diagnostics.hpp"

namespace lht {

struct SampleEntry {
  std::filesystem::path image;
  std::filesystem::path label;  // may be empty
  std::string dataset;          // "default" when omitted
};

std::vector<SampleEntry> read_sample_list(const std::filesystem::path& path,
                                          bool need_labels);

/// Seeded subset of at most n entries, kept in list order.
std::vector<SampleEntry> subsample(std::vector<SampleEntry> all, std::size_t n,
                                   std::uint64_t seed);

/// Image resized to the model's native input, labels by nearest neighbour,
/// reduced to one majority label per patch.
LabeledSample load_labeled(const SampleEntry& e, const VitModel& m, int ignore_index);

}  // namespace lht
