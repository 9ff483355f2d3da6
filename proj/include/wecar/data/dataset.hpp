#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "wecar/data/csi.hpp"

namespace wecar::data {

struct LabeledSample {
  CsiMatrix matrix;
  std::size_t label = 0;
};

/// A set of equally-shaped samples. Class ids are 0..num_classes-1.
struct Dataset {
  std::vector<LabeledSample> samples;
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t num_classes = 0;

  std::size_t size() const { return samples.size(); }
  std::vector<std::size_t> class_counts() const;
};

/// Malformed CSV container content; `line()` is 1-based.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// CSV container: a header line `label,<n>,<d>` declaring the shape, then one
// line per sample `label,<n*d values row-major>`. Empty fields are missing
// cells. UTF-8, LF line endings.

/// Parses CSV container text. With `require_contiguous` the labels must cover
/// 0..C-1 exactly (dataset files); DATA_BATCH payloads relax this.
Dataset parse_dataset(std::string_view text, bool require_contiguous = true);
std::string format_dataset(const Dataset& ds);

Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);

/// Per-class deterministic shuffle then split; each class contributes
/// round(test_fraction * count) samples to the test side.
std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, double test_fraction,
                                             unsigned long long seed);

}  // namespace wecar::data
