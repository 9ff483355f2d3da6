#include "wecar/data/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

namespace wecar::data {

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (const auto& s : samples) {
    if (s.label < counts.size()) ++counts[s.label];
  }
  return counts;
}

ParseError::ParseError(std::size_t line, const std::string& what)
    : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::size_t parse_count(std::string_view f, std::size_t line, const char* what) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
  if (ec != std::errc() || p != f.data() + f.size()) {
    throw ParseError(line, std::string("invalid ") + what + " '" + std::string(f) + "'");
  }
  return v;
}

double parse_real(std::string_view f, std::size_t line) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
  if (ec != std::errc() || p != f.data() + f.size() || !std::isfinite(v)) {
    throw ParseError(line, "invalid value '" + std::string(f) + "'");
  }
  return v;
}

void append_real(std::string& out, double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, p);
}

}  // namespace

Dataset parse_dataset(std::string_view text, bool require_contiguous) {
  Dataset ds;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::size_t max_label = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;

    auto fields = split_fields(line);
    if (!header_seen) {
      if (fields.size() != 3 || fields[0] != "label") {
        throw ParseError(line_no, "expected header 'label,<n>,<d>'");
      }
      ds.n = parse_count(fields[1], line_no, "n");
      ds.d = parse_count(fields[2], line_no, "d");
      if (ds.n == 0 || ds.d == 0) throw ParseError(line_no, "n and d must be >= 1");
      header_seen = true;
      continue;
    }
    if (fields.size() != 1 + ds.n * ds.d) {
      throw ParseError(line_no, "expected " + std::to_string(1 + ds.n * ds.d) +
                                    " fields for a " + std::to_string(ds.n) + "x" +
                                    std::to_string(ds.d) + " sample, got " +
                                    std::to_string(fields.size()));
    }
    LabeledSample s;
    s.label = parse_count(fields[0], line_no, "label");
    s.matrix = CsiMatrix(ds.n, ds.d);
    for (std::size_t k = 0; k < ds.n * ds.d; ++k) {
      const auto f = fields[1 + k];
      if (f.empty()) {
        s.matrix.set_missing(k / ds.d, k % ds.d);
      } else {
        s.matrix.set(k / ds.d, k % ds.d, parse_real(f, line_no));
      }
    }
    max_label = std::max(max_label, s.label);
    ds.samples.push_back(std::move(s));
  }
  if (!header_seen) throw ParseError(line_no == 0 ? 1 : line_no, "empty dataset file");
  if (ds.samples.empty()) throw ParseError(line_no, "dataset has no samples");

  ds.num_classes = max_label + 1;
  if (require_contiguous) {
    std::vector<bool> seen(ds.num_classes, false);
    for (const auto& s : ds.samples) seen[s.label] = true;
    for (std::size_t c = 0; c < seen.size(); ++c) {
      if (!seen[c]) {
        throw ParseError(line_no, "class ids must be contiguous from 0; class " +
                                      std::to_string(c) + " has no samples");
      }
    }
  }
  return ds;
}

std::string format_dataset(const Dataset& ds) {
  std::string out = "label," + std::to_string(ds.n) + "," + std::to_string(ds.d) + "\n";
  for (const auto& s : ds.samples) {
    out += std::to_string(s.label);
    for (std::size_t t = 0; t < ds.n; ++t)
      for (std::size_t i = 0; i < ds.d; ++i) {
        out += ',';
        if (!s.matrix.is_missing(t, i)) append_real(out, s.matrix.at(t, i));
      }
    out += '\n';
  }
  return out;
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_dataset: cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str(), true);
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("save_dataset: cannot write " + path.string());
  out << format_dataset(ds);
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, double test_fraction,
                                             unsigned long long seed) {
  if (test_fraction < 0.0 || test_fraction >= 1.0) {
    throw ConfigError("split_train_test: test_fraction must be in [0, 1)");
  }
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) by_class[ds.samples[i].label].push_back(i);

  core::Rng rng(seed);
  Dataset train{{}, ds.n, ds.d, ds.num_classes};
  Dataset test{{}, ds.n, ds.d, ds.num_classes};
  for (auto& [label, idx] : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_test =
        static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(idx.size())));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      (k < n_test ? test : train).samples.push_back(ds.samples[idx[k]]);
    }
  }
  return {std::move(train), std::move(test)};
}

}  // namespace wecar::data
