#include "lht/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include "lht/error.hpp"
#include "lht/image.hpp"

namespace lht {

namespace fs = std::filesystem;

std::vector<SampleEntry> read_sample_list(const fs::path& path, bool need_labels) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open sample list " + path.string());
  const fs::path base = path.parent_path();
  const auto resolve = [&](const std::string& s) {
    fs::path p(s);
    return p.is_relative() ? base / p : p;
  };
  std::vector<SampleEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream row(line);
    std::string image, label, dataset;
    if (!(row >> image)) continue;
    row >> label >> dataset;
    if (need_labels && label.empty())
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                           ": missing label path");
    out.push_back({resolve(image), label.empty() ? fs::path{} : resolve(label),
                   dataset.empty() ? "default" : dataset});
  }
  if (out.empty()) throw DataError("sample list " + path.string() + " is empty");
  return out;
}

std::vector<SampleEntry> subsample(std::vector<SampleEntry> all, std::size_t n,
                                   std::uint64_t seed) {
  if (all.size() <= n) return all;
  std::vector<std::size_t> idx(all.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  std::vector<SampleEntry> out;
  for (auto i : idx) out.push_back(std::move(all[i]));
  return out;
}

LabeledSample load_labeled(const SampleEntry& e, const VitModel& m,
                                int ignore_index) {
  const int s = m.config.image_size;
  Image img = load_image(e.image);
  ClassMap gt = load_label_map(e.label);
  if (gt.height != img.height || gt.width != img.width)
    throw DataError("label map " + e.label.string() + " does not match its image size");
  if (img.height != s || img.width != s) img = resize_bilinear(img, s, s);
  if (gt.height != s || gt.width != s) gt = resize_nearest(gt, s, s);
  return {std::move(img), patch_labels_from_pixels(gt, m.config.patch_size, ignore_index),
          e.dataset};
}

}  // namespace lht
