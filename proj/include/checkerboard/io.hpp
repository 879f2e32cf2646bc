#pragma once

// JSON / CSV forms of orders, partitions, masks, grids and traces, plus
// SHA-256 content hashes for artifact manifests.

#include <openssl/evp.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "checkerboard/layout_mask.hpp"
#include "checkerboard/sampler.hpp"
#include "checkerboard/train.hpp"
#include "json.hpp"

namespace checkerboard {

using nlohmann::json;

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << content;
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

inline json read_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("malformed JSON in " + path.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const json& j) { write_file(path, j.dump(1) + "\n"); }

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return os.str();
}

inline std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

// --- orders -----------------------------------------------------------------

inline json order_to_json(const ScanOrder& o) {
  json arr = json::array();
  for (const Position& p : o.positions) arr.push_back({p.x, p.y});
  return arr;
}

// Dimensions are inferred from the largest coordinates.
inline ScanOrder order_from_json(const json& j) {
  if (!j.is_array()) throw std::invalid_argument("order JSON must be an array of [x, y] pairs");
  ScanOrder o;
  for (const json& e : j) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number_integer())
      throw std::invalid_argument("order JSON entries must be [x, y] integer pairs");
    const Position p{e[0].get<int>(), e[1].get<int>()};
    if (p.x < 0 || p.y < 0) throw std::invalid_argument("order JSON has a negative coordinate");
    o.positions.push_back(p);
    o.width = std::max(o.width, p.x + 1);
    o.height = std::max(o.height, p.y + 1);
  }
  o.side = std::max(o.width, o.height);
  return o;
}

struct OrderCheck {
  std::string name;
  bool ok = true;
  std::string detail;
};

// Every invariant that applies to the order's shape.
inline std::vector<OrderCheck> check_order(const ScanOrder& o) {
  std::vector<OrderCheck> out;
  const bool perm = is_permutation_of_grid(o);
  out.push_back({"permutation", perm, perm ? "" : "positions are not a permutation of the grid"});
  const bool square_pow2 = o.width == o.height && is_power_of_two(o.side) && perm;
  if (square_pow2) {
    std::size_t bad = 0;
    for (std::size_t k = 0; k <= o.positions.size(); ++k)
      if (!check_balance(o, k)) {
        bad = k;
        break;
      }
    out.push_back({"balance", bad == 0, bad ? "prefix " + std::to_string(bad) + " unbalanced" : ""});
    bool half = true;
    const std::size_t n = o.positions.size() / 2;
    for (std::size_t i = 0; i < n && o.side >= 2; ++i)
      if ((o.positions[i].x + o.positions[i].y) % 2 != 0) half = false;
    out.push_back({"checkerboard_half", half, half ? "" : "first half contains odd cells"});
  }
  return out;
}

// --- schedules and masks ------------------------------------------------------

inline json partition_to_json(const BlockPartition& part) {
  json j;
  j["ratio"] = to_string(part.schedule.ratio);
  j["sizes"] = part.schedule.sizes;
  j["order"] = to_string(part.order_kind);
  j["p"] = part.requested_p;
  j["steps_per_scale"] = part.steps_per_scale;
  j["total_steps"] = total_steps(part);
  json scales = json::array();
  for (const auto& blocks : part.blocks) {
    json bs = json::array();
    for (const Block& b : blocks) {
      json ps = json::array();
      for (const Position& p : b.positions) ps.push_back({p.x, p.y});
      bs.push_back(ps);
    }
    scales.push_back(bs);
  }
  j["blocks"] = scales;
  return j;
}

// Compact form always; explicit bit rows ('1' = visible) when T <= max_rows.
inline json mask_to_json(const SequenceLayout& layout, const BlockCausalMask& mask, std::size_t max_rows = 512) {
  json j;
  j["length"] = mask.size();
  j["num_blocks"] = mask.num_blocks();
  std::vector<int> block_of(mask.size());
  for (std::size_t t = 0; t < mask.size(); ++t) block_of[t] = mask.block_of(t);
  j["block_of"] = block_of;
  std::vector<std::size_t> ends(mask.num_blocks());
  for (std::size_t b = 0; b < ends.size(); ++b) ends[b] = mask.block_end(b);
  j["block_end"] = ends;
  json tokens = json::array();
  tokens.push_back({{"slot", 0}, {"class_token", true}});
  for (const LayoutEntry& e : layout.entries)
    tokens.push_back({{"slot", e.flat}, {"scale", e.scale}, {"block", e.block}, {"x", e.pos.x}, {"y", e.pos.y}});
  j["tokens"] = tokens;
  if (mask.size() <= max_rows) {
    json rows = json::array();
    for (std::size_t q = 0; q < mask.size(); ++q) {
      std::string r(mask.size(), '0');
      for (std::size_t k = 0; k < mask.key_end(q); ++k) r[k] = '1';
      rows.push_back(r);
    }
    j["rows"] = rows;
  }
  return j;
}

// --- grids and samples ------------------------------------------------------

inline json grid_to_json(const TokenGrid& g) {
  json rows = json::array();
  for (int y = 0; y < g.side; ++y) {
    json r = json::array();
    for (int x = 0; x < g.side; ++x) r.push_back(g.at(x, y));
    rows.push_back(r);
  }
  return {{"side", g.side}, {"cells", rows}};
}

inline TokenGrid grid_from_json(const json& j) {
  const int side = j.at("side").get<int>();
  const json& rows = j.at("cells");
  if (side < 1 || !rows.is_array() || rows.size() != static_cast<std::size_t>(side))
    throw std::invalid_argument("grid JSON: cells must be side x side");
  TokenGrid g(side, 0);
  for (int y = 0; y < side; ++y) {
    const json& r = rows[static_cast<std::size_t>(y)];
    if (!r.is_array() || r.size() != static_cast<std::size_t>(side))
      throw std::invalid_argument("grid JSON: row " + std::to_string(y) + " has wrong length");
    for (int x = 0; x < side; ++x) g.at(x, y) = r[static_cast<std::size_t>(x)].get<int>();
  }
  return g;
}

struct SampleSet {
  int side = 0;
  int vocab = 0;
  int label = 0;
  std::vector<TokenGrid> grids;
};

// Grids are stored as flat row-major strings of token ids for compactness.
inline json samples_to_json(const SampleSet& s) {
  json grids = json::array();
  for (const TokenGrid& g : s.grids) grids.push_back(g.cells);
  return {{"side", s.side}, {"vocab", s.vocab}, {"class", s.label}, {"grids", grids}};
}

inline SampleSet samples_from_json(const json& j) {
  SampleSet s;
  s.side = detail::require<int>(j, "side", "samples.");
  s.vocab = detail::require<int>(j, "vocab", "samples.");
  s.label = detail::optional_field<int>(j, "class", 0, "samples.");
  for (const json& g : detail::require<json>(j, "grids", "samples.")) {
    TokenGrid grid(s.side, 0);
    grid.cells = g.get<std::vector<int>>();
    if (grid.cells.size() != static_cast<std::size_t>(s.side) * s.side)
      throw std::invalid_argument("samples: grid has " + std::to_string(grid.cells.size()) + " cells, expected " +
                                  std::to_string(s.side * s.side));
    for (int v : grid.cells)
      if (v < 0 || v >= s.vocab) throw std::invalid_argument("samples: token " + std::to_string(v) + " outside vocab");
    s.grids.push_back(std::move(grid));
  }
  return s;
}

inline json table_to_json(const ProbabilityTable& t, const GridDistribution& d, int label) {
  json dist;
  to_json(dist, d);
  return {{"distribution", dist}, {"class", label},  {"side", t.side},
          {"vocab", t.vocab},     {"log_partition", t.log_partition}, {"p", t.p}};
}

inline ProbabilityTable table_from_json(const json& j) {
  ProbabilityTable t;
  t.side = detail::require<int>(j, "side", "table.");
  t.vocab = detail::require<int>(j, "vocab", "table.");
  t.log_partition = detail::optional_field<double>(j, "log_partition", 0.0, "table.");
  t.p = detail::require<std::vector<double>>(j, "p", "table.");
  const double states = std::pow(static_cast<double>(t.vocab), static_cast<double>(t.side) * t.side);
  if (static_cast<double>(t.p.size()) != states) throw std::invalid_argument("table: p has wrong length");
  return t;
}

// --- traces -----------------------------------------------------------------

inline void write_trace_csv(std::ostream& os, const SampleTrace& trace, bool header = true) {
  if (header) os << "step,scale,block,x,y,token,entropy_nats\n";
  for (const TokenRecord& r : trace.tokens)
    os << r.step << ',' << r.scale << ',' << r.block << ',' << r.pos.x << ',' << r.pos.y << ',' << r.token << ','
       << format_double(r.entropy) << '\n';
}

inline std::string entropy_csv(const std::vector<EntropyRow>& rows) {
  std::ostringstream os;
  os << "step,mean,p25,p75\n";
  for (const EntropyRow& r : rows)
    os << r.step << ',' << format_double(r.mean) << ',' << format_double(r.p25) << ',' << format_double(r.p75) << '\n';
  return os.str();
}

// Minimal reader for the numeric CSVs this library writes (header + rows).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw std::invalid_argument("CSV has no column '" + name + "'");
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::istringstream is(read_file(path));
  CsvTable t;
  std::string line;
  if (!std::getline(is, line)) throw std::invalid_argument("empty CSV " + path.string());
  t.header = split_csv_line(line);
  while (std::getline(is, line))
    if (!line.empty()) t.rows.push_back(split_csv_line(line));
  return t;
}

}  // namespace checkerboard
