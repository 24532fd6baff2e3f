#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "qbench/errors.hpp"
#include "qbench/reftrain/dataset.hpp"
#include "qbench/tensor.hpp"

namespace qbench {

namespace fs = std::filesystem;

// Binary PPM (P6). Samples wider than 8 bits (maxval > 255) are big-endian
// 16-bit words, per the netpbm format.
inline Tensor decode_ppm(const std::string& bytes, const std::string& name) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&](const char* what) {
    skip_space();
    const std::size_t start = pos;
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (v > 1u << 24) throw IngestionError(name, std::string("PPM ") + what + " is too large");
      ++pos;
    }
    if (pos == start) throw IngestionError(name, std::string("PPM header lacks ") + what);
    return v;
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw IngestionError(name, "not a binary PPM (P6)");
  pos = 2;
  const std::size_t w = read_uint("width"), h = read_uint("height"), maxval = read_uint("maxval");
  if (w == 0 || h == 0) throw IngestionError(name, "PPM has a zero dimension");
  if (maxval == 0 || maxval > 65535) throw IngestionError(name, "PPM maxval out of range");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw IngestionError(name, "PPM header not followed by whitespace");
  ++pos;
  const std::size_t sample = maxval > 255 ? 2 : 1;
  const std::size_t need = w * h * 3 * sample;
  if (bytes.size() - pos < need)
    throw IngestionError(name, "PPM pixel data truncated: expected " + std::to_string(need) + " bytes, found " +
                                   std::to_string(bytes.size() - pos));
  std::vector<float> px(3 * h * w);
  const auto* d = reinterpret_cast<const unsigned char*>(bytes.data()) + pos;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t at = ((y * w + x) * 3 + c) * sample;
        const std::size_t v = sample == 2 ? (static_cast<std::size_t>(d[at]) << 8) | d[at + 1] : d[at];
        if (v > maxval) throw IngestionError(name, "PPM sample exceeds maxval");
        px[(c * h + y) * w + x] = static_cast<float>(static_cast<double>(v) / static_cast<double>(maxval));
      }
  return Tensor({3, h, w}, std::move(px));
}

inline std::string encode_ppm(const Tensor& img) {
  if (img.rank() != 3 || img.dim(0) != 3) throw ShapeError("PPM output needs a 3xHxW image");
  const std::size_t h = img.dim(1), w = img.dim(2);
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  const std::size_t head = out.size();
  out.resize(head + 3 * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(static_cast<double>(img[(c * h + y) * w + x]), 0.0, 1.0);
        out[head + (y * w + x) * 3 + c] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
      }
  return out;
}

inline std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IngestionError(p.string(), "cannot open");
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

inline void write_text(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + p.string() + "' for writing");
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
  if (!f) throw IoError("failed writing '" + p.string() + "'");
}

struct LabelRow {
  std::string id;
  int label = 0;
  std::optional<double> score;
};

// labels.csv: `id,label[,score]` with an optional header row.
inline std::vector<LabelRow> parse_labels(const std::string& text, const std::string& name) {
  std::vector<LabelRow> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (lineno == 1 && !f.empty() && f[0] == "id") continue;
    const std::string where = "line " + std::to_string(lineno);
    if (f.size() < 2 || f.size() > 3) throw IngestionError(name, where + ": expected id,label[,score]");
    LabelRow r;
    r.id = f[0];
    if (r.id.empty()) throw IngestionError(name, where + ": empty id");
    if (f[1] == "0" || f[1] == "1")
      r.label = f[1][0] - '0';
    else
      throw IngestionError(name, where + ": label must be 0 or 1");
    if (f.size() == 3 && !f[2].empty()) {
      try {
        std::size_t used = 0;
        r.score = std::stod(f[2], &used);
        if (used != f[2].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw IngestionError(name, where + ": malformed score");
      }
    }
    if (!seen.insert(r.id).second) throw IngestionError(name, where + ": duplicate id '" + r.id + "'");
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw IngestionError(name, "no label rows");
  return rows;
}

// Loads `<dir>/labels.csv` and one `<dir>/<id>.ppm` per row. Every PPM in the
// directory must have a label row. Images are resized to (h, w) when given.
inline Dataset load_dataset(const std::string& dir, std::optional<std::pair<std::size_t, std::size_t>> size = {}) {
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw IngestionError(dir, "not a directory");
  const fs::path labels_path = root / "labels.csv";
  if (!fs::exists(labels_path)) throw IngestionError(labels_path.string(), "missing");
  const auto rows = parse_labels(read_text(labels_path), labels_path.string());

  std::set<std::string> labelled;
  for (const auto& r : rows) labelled.insert(r.id);
  std::vector<std::string> orphans;
  for (const auto& e : fs::directory_iterator(root))
    if (e.path().extension() == ".ppm" && !labelled.count(e.path().stem().string()))
      orphans.push_back(e.path().string());
  if (!orphans.empty()) {
    std::sort(orphans.begin(), orphans.end());
    throw IngestionError(orphans.front(), "no label row in labels.csv");
  }

  Dataset ds;
  for (const auto& r : rows) {
    const fs::path p = root / (r.id + ".ppm");
    if (!fs::exists(p)) throw IngestionError(p.string(), "image listed in labels.csv is missing");
    Tensor img = decode_ppm(read_text(p), p.string());
    if (size) img = resize_bilinear(img, size->first, size->second);
    ds.images.push_back(std::move(img));
    ds.labels.push_back(r.label);
    ds.ids.push_back(r.id);
  }
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& dir) {
  ds.validate();
  const fs::path root(dir);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
  std::string csv = "id,label\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    write_text(root / (ds.ids[i] + ".ppm"), encode_ppm(ds.images[i]));
    csv += ds.ids[i] + "," + std::to_string(ds.labels[i]) + "\n";
  }
  write_text(root / "labels.csv", csv);
}

}  // namespace qbench
