#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "flowtok/datamodel.hpp"

namespace flowtok {

enum class DataSource { synthetic_shapes, image_folder };

struct DatasetSpec {
    DataSource source = DataSource::synthetic_shapes;
    std::string path;  // image_folder only
    int K = 10;
    int n_per_class = 64;
    int image_size = 64;
    uint64_t seed = 1;
};

struct Dataset {
    Tensor images;  // (N,H,W,3) in [0,1]
    std::vector<int> labels;
    int num_classes = 0;
    std::vector<std::string> class_names;

    int size() const { return static_cast<int>(labels.size()); }
    int image_size() const { return images.shape.size() == 4 ? images.shape[1] : 0; }
    ImageBatch batch(const std::vector<int>& indices) const;
};

// K glyph classes told apart by silhouette; colors, placement, scale and
// background vary per image so class is not readable from color statistics.
// Canonical order interleaves classes (i*K + k), balanced by construction.
Dataset generate_synthetic(const DatasetSpec& spec);

// Class subdirectories of PNG/JPEG files, labels assigned by lexicographic
// directory name. Unreadable files are skipped with a warning on stderr;
// throws EmptyDataset if nothing decodes.
Dataset ingest_folder(const std::string& path, int image_size);

// Builds from spec.source (ingest paths ignore K/n_per_class).
Dataset build_dataset(const DatasetSpec& spec);

// First n_train items of the canonical order and the following n_val; throws
// DatasetTooSmall when the dataset cannot cover both splits.
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, int n_train, int n_val);

// Deterministic epoch shuffle: a pure function of (seed, purpose, epoch).
std::vector<int> epoch_order(int n, uint64_t seed, uint64_t purpose, uint64_t epoch);

}  // namespace flowtok
