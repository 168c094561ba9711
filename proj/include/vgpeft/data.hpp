#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vgpeft/metrics.hpp"
#include "vgpeft/tensor.hpp"
#include "vgpeft/types.hpp"

namespace vgp {

// Patch features for one image, row-major grid*grid rows of `dim` values.
struct PatchGrid {
  std::size_t grid = 0;
  std::size_t dim = 0;
  std::vector<double> data;

  Tensor tensor() const;  // (grid*grid, dim), no gradients
};

// One referring expression with its image and target box.
struct AnnotationRecord {
  std::string pair_id;
  std::string image_id;
  double width = 0.0;   // image extent, pixels
  double height = 0.0;
  std::string query;
  BBox bbox;            // pixel corners
  std::string category;              // optional
  std::optional<PatchGrid> patches;  // optional precomputed features

  // Throws ValidationError (naming pair_id) on any malformed field.
  void validate() const;

  // Target box normalized to the image extent, center form.
  NormBox norm_box() const;
};

// One JSON object per line. Parse failures carry the line number; content
// failures name the offending pair. Nothing is repaired.
std::vector<AnnotationRecord> load_annotations(const std::string& path);
void save_annotations(const std::string& path,
                      const std::vector<AnnotationRecord>& records);

struct Prediction {
  std::string pair_id;
  BBox bbox;  // pixel corners
};

std::vector<Prediction> load_predictions(const std::string& path);
void save_predictions(const std::string& path,
                      const std::vector<Prediction>& preds);

struct JoinedPair {
  std::string pair_id;
  BBox pred;
  BBox gt;
};

// Pairs every annotation with its prediction, in annotation order. A missing
// or orphaned prediction is an error, not a skip.
std::vector<JoinedPair> join_predictions(
    const std::vector<AnnotationRecord>& records,
    const std::vector<Prediction>& preds);

// Whitespace tokenizer over a fixed word list; unknown words hash into the
// id range. Ids lie in [1, vocab).
std::vector<std::size_t> tokenize(const std::string& text, std::size_t vocab);

// The spatial label of a grid cell: left/right bands win over top/bottom,
// which win over middle. Bands are grid/3 cells wide.
std::string position_of(std::size_t row, std::size_t col, std::size_t grid);

const std::vector<std::string>& position_labels();

struct SyntheticSpec {
  std::size_t count = 0;
  std::uint64_t seed = 0;
  std::size_t grid = 4;
  std::size_t cell_px = 32;
  std::size_t patch_dim = 16;
  std::vector<std::string> classes = {"airplane", "ship", "storage tank",
                                      "harbor"};
  std::size_t min_distractors = 1;
  std::size_t max_distractors = 3;
  double noise = 0.1;

  void validate() const;
};

// Scenes of single-cell objects on a grid; each query ("the <class> on the
// <position>") matches exactly one object. Patch features carry class
// one-hots plus Gaussian noise — position is never written into features.
std::vector<AnnotationRecord> generate_synthetic(const SyntheticSpec& spec);

// Deterministic shuffle-and-cut by seed; order within each half follows the
// shuffle.
std::pair<std::vector<AnnotationRecord>, std::vector<AnnotationRecord>>
split_records(const std::vector<AnnotationRecord>& records,
              std::size_t n_train, std::uint64_t seed);

}  // namespace vgp
