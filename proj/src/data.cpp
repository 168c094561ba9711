#include "vgpeft/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "vgpeft/error.hpp"
#include "vgpeft/hash.hpp"

namespace vgp {

using nlohmann::json;

Tensor PatchGrid::tensor() const {
  return Tensor({grid * grid, dim}, data, false);
}

void AnnotationRecord::validate() const {
  if (pair_id.empty()) throw ValidationError("record has empty pair_id");
  const std::string who = "pair '" + pair_id + "'";
  if (query.empty()) throw ValidationError(who + ": empty query");
  if (!(width > 0.0) || !(height > 0.0))
    throw ValidationError(who + ": non-positive image extent");
  if (!(bbox.xmax > bbox.xmin) || !(bbox.ymax > bbox.ymin))
    throw ValidationError(who + ": degenerate bbox");
  if (bbox.xmin < 0.0 || bbox.ymin < 0.0 || bbox.xmax > width ||
      bbox.ymax > height)
    throw ValidationError(who + ": bbox exceeds image bounds");
  if (patches) {
    if (patches->grid == 0 || patches->dim == 0)
      throw ValidationError(who + ": empty patch grid");
    if (patches->data.size() != patches->grid * patches->grid * patches->dim)
      throw ValidationError(who + ": patch data holds " +
                            std::to_string(patches->data.size()) +
                            " values, expected " +
                            std::to_string(patches->grid * patches->grid *
                                           patches->dim));
  }
}

NormBox AnnotationRecord::norm_box() const {
  NormBox b;
  b.cx = 0.5 * (bbox.xmin + bbox.xmax) / width;
  b.cy = 0.5 * (bbox.ymin + bbox.ymax) / height;
  b.w = (bbox.xmax - bbox.xmin) / width;
  b.h = (bbox.ymax - bbox.ymin) / height;
  return b;
}

namespace {

// Wraps json access so a bad line reports its position instead of
// propagating a library message with no context.
template <typename Fn>
auto parse_guard(std::size_t line_no, const std::string& path, Fn&& fn)
    -> decltype(fn()) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
  }
}

BBox bbox_from_json(const json& arr) {
  if (!arr.is_array() || arr.size() != 4)
    throw json::type_error::create(302, "bbox must be [xmin,ymin,xmax,ymax]",
                                   nullptr);
  return BBox{arr[0].get<double>(), arr[1].get<double>(),
              arr[2].get<double>(), arr[3].get<double>()};
}

json bbox_to_json(const BBox& b) {
  return json::array({b.xmin, b.ymin, b.xmax, b.ymax});
}

}  // namespace

std::vector<AnnotationRecord> load_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");

  std::vector<AnnotationRecord> out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    AnnotationRecord r = parse_guard(line_no, path, [&] {
      const json j = json::parse(line);
      AnnotationRecord rec;
      rec.pair_id = j.at("pair_id").get<std::string>();
      rec.image_id = j.value("image_id", std::string());
      rec.width = j.at("width").get<double>();
      rec.height = j.at("height").get<double>();
      rec.query = j.at("query").get<std::string>();
      rec.bbox = bbox_from_json(j.at("bbox"));
      rec.category = j.value("category", std::string());
      if (j.contains("patches")) {
        const json& p = j.at("patches");
        PatchGrid g;
        g.grid = p.at("grid").get<std::size_t>();
        g.dim = p.at("dim").get<std::size_t>();
        g.data = p.at("data").get<std::vector<double>>();
        rec.patches = std::move(g);
      }
      return rec;
    });
    r.validate();
    if (!seen.insert(r.pair_id).second)
      throw ValidationError(path + ": duplicate pair_id '" + r.pair_id + "'");
    out.push_back(std::move(r));
  }
  return out;
}

void save_annotations(const std::string& path,
                      const std::vector<AnnotationRecord>& records) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path + "'");
  for (const AnnotationRecord& r : records) {
    r.validate();
    json j{{"pair_id", r.pair_id}, {"image_id", r.image_id},
           {"width", r.width},     {"height", r.height},
           {"query", r.query},     {"bbox", bbox_to_json(r.bbox)}};
    if (!r.category.empty()) j["category"] = r.category;
    if (r.patches)
      j["patches"] = json{{"grid", r.patches->grid},
                          {"dim", r.patches->dim},
                          {"data", r.patches->data}};
    out << j.dump() << "\n";
  }
  if (!out) throw InputError("write to '" + path + "' failed");
}

std::vector<Prediction> load_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::vector<Prediction> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    out.push_back(parse_guard(line_no, path, [&] {
      const json j = json::parse(line);
      return Prediction{j.at("pair_id").get<std::string>(),
                        bbox_from_json(j.at("bbox"))};
    }));
    if (out.back().pair_id.empty())
      throw ValidationError(path + ":" + std::to_string(line_no) +
                            ": empty pair_id");
  }
  return out;
}

void save_predictions(const std::string& path,
                      const std::vector<Prediction>& preds) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path + "'");
  for (const Prediction& p : preds)
    out << json{{"pair_id", p.pair_id}, {"bbox", bbox_to_json(p.bbox)}}.dump()
        << "\n";
  if (!out) throw InputError("write to '" + path + "' failed");
}

std::vector<JoinedPair> join_predictions(
    const std::vector<AnnotationRecord>& records,
    const std::vector<Prediction>& preds) {
  std::unordered_map<std::string, const Prediction*> by_id;
  for (const Prediction& p : preds)
    if (!by_id.emplace(p.pair_id, &p).second)
      throw JoinError("duplicate prediction for pair '" + p.pair_id + "'");

  std::vector<JoinedPair> out;
  std::unordered_set<std::string> used;
  for (const AnnotationRecord& r : records) {
    auto it = by_id.find(r.pair_id);
    if (it == by_id.end())
      throw JoinError("no prediction for pair '" + r.pair_id + "'");
    used.insert(r.pair_id);
    out.push_back({r.pair_id, it->second->bbox, r.bbox});
  }
  for (const Prediction& p : preds)
    if (!used.count(p.pair_id))
      throw JoinError("prediction for unknown pair '" + p.pair_id + "'");
  return out;
}

namespace {

const std::vector<std::string>& word_list() {
  static const std::vector<std::string> kWords = {
      "the",  "on",       "left", "right",    "top",  "bottom",
      "middle", "airplane", "ship", "storage", "tank", "harbor"};
  return kWords;
}

}  // namespace

std::vector<std::size_t> tokenize(const std::string& text, std::size_t vocab) {
  if (vocab < 2) throw ConfigError("tokenize: vocab must be at least 2");
  std::vector<std::size_t> ids;
  std::istringstream in(text);
  std::string word;
  while (in >> word) {
    std::string w;
    for (char c : word)
      if (std::isalnum(static_cast<unsigned char>(c)))
        w += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (w.empty()) continue;

    std::size_t id = 0;
    const auto& words = word_list();
    auto it = std::find(words.begin(), words.end(), w);
    if (it != words.end()) {
      id = 1 + static_cast<std::size_t>(it - words.begin());
    } else {
      Fnv1a64 h;
      h.update(w);
      id = 1 + static_cast<std::size_t>(h.digest() % (vocab - 1));
    }
    ids.push_back(1 + (id - 1) % (vocab - 1));
  }
  return ids;
}

const std::vector<std::string>& position_labels() {
  static const std::vector<std::string> kLabels = {"left", "right", "top",
                                                   "bottom", "middle"};
  return kLabels;
}

std::string position_of(std::size_t row, std::size_t col, std::size_t grid) {
  if (grid < 3) throw ConfigError("position_of: grid must be at least 3");
  if (row >= grid || col >= grid)
    throw InputError("position_of: cell (" + std::to_string(row) + "," +
                     std::to_string(col) + ") outside grid " +
                     std::to_string(grid));
  const std::size_t lo = grid / 3;
  if (col < lo) return "left";
  if (col >= grid - lo) return "right";
  if (row < lo) return "top";
  if (row >= grid - lo) return "bottom";
  return "middle";
}

void SyntheticSpec::validate() const {
  if (grid < 3) throw ConfigError("synth: grid must be at least 3");
  if (cell_px == 0) throw ConfigError("synth: cell_px must be positive");
  if (classes.empty()) throw ConfigError("synth: no object classes");
  for (const auto& c : classes)
    if (c.empty()) throw ConfigError("synth: empty class name");
  if (patch_dim < classes.size())
    throw ConfigError("synth: patch_dim must fit " +
                      std::to_string(classes.size()) + " class channels");
  if (min_distractors > max_distractors)
    throw ConfigError("synth: min_distractors exceeds max_distractors");
  if (max_distractors + 1 > grid * grid)
    throw ConfigError("synth: more objects than grid cells");
  if (noise < 0.0) throw ConfigError("synth: negative noise");
}

std::vector<AnnotationRecord> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 gen(spec.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  const std::size_t cells = spec.grid * spec.grid;
  const auto& labels = position_labels();

  // Cells per spatial zone, fixed by the grid geometry.
  std::unordered_map<std::string, std::vector<std::size_t>> zone;
  for (std::size_t r = 0; r < spec.grid; ++r)
    for (std::size_t c = 0; c < spec.grid; ++c)
      zone[position_of(r, c, spec.grid)].push_back(r * spec.grid + c);

  std::vector<AnnotationRecord> out;
  out.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) {
    std::uniform_int_distribution<std::size_t> pick_class(
        0, spec.classes.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_pos(0, labels.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_cell(0, cells - 1);
    std::uniform_int_distribution<std::size_t> pick_n(spec.min_distractors,
                                                      spec.max_distractors);

    const std::size_t ref_class = pick_class(gen);
    const std::string position = labels[pick_pos(gen)];
    const auto& zone_cells = zone.at(position);
    std::uniform_int_distribution<std::size_t> pick_zone_cell(
        0, zone_cells.size() - 1);
    const std::size_t ref_cell = zone_cells[pick_zone_cell(gen)];

    std::vector<std::pair<std::size_t, std::size_t>> objects;  // (class, cell)
    objects.emplace_back(ref_class, ref_cell);
    std::unordered_set<std::size_t> occupied{ref_cell};

    const std::size_t n_distractors = pick_n(gen);
    for (std::size_t k = 0; k < n_distractors; ++k) {
      bool placed = false;
      for (std::size_t attempt = 0; attempt < 200 && !placed; ++attempt) {
        const std::size_t cls = pick_class(gen);
        const std::size_t cell = pick_cell(gen);
        if (occupied.count(cell)) continue;
        const std::string pos =
            position_of(cell / spec.grid, cell % spec.grid, spec.grid);
        // A lookalike in the referent's zone would make the query ambiguous.
        if (cls == ref_class && pos == position) continue;
        objects.emplace_back(cls, cell);
        occupied.insert(cell);
        placed = true;
      }
      if (!placed)
        throw GenerationError("could not place distractor " +
                              std::to_string(k) + " of record " +
                              std::to_string(i));
    }

    PatchGrid patches;
    patches.grid = spec.grid;
    patches.dim = spec.patch_dim;
    patches.data.assign(cells * spec.patch_dim, 0.0);
    for (const auto& [cls, cell] : objects)
      patches.data[cell * spec.patch_dim + cls] = 1.0;
    if (spec.noise > 0.0)
      for (double& v : patches.data) v += unit(gen) * spec.noise;

    AnnotationRecord rec;
    rec.pair_id = "synth-" + std::to_string(spec.seed) + "-" +
                  std::to_string(i);
    rec.image_id = "img-" + std::to_string(spec.seed) + "-" +
                   std::to_string(i);
    rec.width = static_cast<double>(spec.grid * spec.cell_px);
    rec.height = rec.width;
    rec.query = "the " + spec.classes[ref_class] + " on the " + position;
    rec.category = spec.classes[ref_class];
    const std::size_t rr = ref_cell / spec.grid, cc = ref_cell % spec.grid;
    rec.bbox = {static_cast<double>(cc * spec.cell_px),
                static_cast<double>(rr * spec.cell_px),
                static_cast<double>((cc + 1) * spec.cell_px),
                static_cast<double>((rr + 1) * spec.cell_px)};
    rec.patches = std::move(patches);
    rec.validate();
    out.push_back(std::move(rec));
  }
  return out;
}

std::pair<std::vector<AnnotationRecord>, std::vector<AnnotationRecord>>
split_records(const std::vector<AnnotationRecord>& records,
              std::size_t n_train, std::uint64_t seed) {
  if (n_train > records.size())
    throw InputError("split: " + std::to_string(n_train) +
                     " training records requested from " +
                     std::to_string(records.size()));
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 gen(seed);
  std::shuffle(order.begin(), order.end(), gen);

  std::pair<std::vector<AnnotationRecord>, std::vector<AnnotationRecord>> out;
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < n_train ? out.first : out.second).push_back(records[order[i]]);
  return out;
}

}  // namespace vgp
