#include "protopaws/embedding_store.hpp"

#include "protopaws/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>

namespace protopaws {

namespace {

constexpr char kMagic[4] = {'E', 'M', 'B', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 32;

static_assert(std::endian::native == std::endian::little,
              "EMB1 I/O assumes a little-endian host");

class Reader {
public:
    explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

    template <typename T>
    T read(const char* field) {
        T value;
        take(&value, sizeof(T), field);
        return value;
    }

    template <typename T>
    void read_array(std::vector<T>& out, std::size_t count, const char* field) {
        out.resize(count);
        take(out.data(), count * sizeof(T), field);
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void take(void* dst, std::size_t n, const char* field) {
        if (remaining() < n) {
            throw FormatError(std::string("EMB1: truncated file while reading ") + field);
        }
        if (n > 0) std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }

    std::vector<char> bytes_;
    std::size_t pos_ = 0;
};

template <typename T>
void write_pod(std::ofstream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
void write_array(std::ofstream& out, const std::vector<T>& values) {
    if (!values.empty()) {
        out.write(reinterpret_cast<const char*>(values.data()),
                  static_cast<std::streamsize>(values.size() * sizeof(T)));
    }
}

std::span<const float> row_at(const std::vector<float>& block, std::size_t row, std::size_t dim) {
    return {block.data() + row * dim, dim};
}

RowMatrixXf gather_rows(const std::vector<float>& src, std::size_t n, std::size_t stride_rows,
                        std::size_t offset_row, std::size_t dim) {
    RowMatrixXf m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < n; ++i) {
        const float* p = src.data() + (i * stride_rows + offset_row) * dim;
        std::copy(p, p + dim, m.row(static_cast<Eigen::Index>(i)).data());
    }
    return m;
}

} // namespace

std::span<const float> EmbeddingDataset::canonical_row(std::size_t item) const {
    return row_at(canonical, item, dim);
}

std::span<const float> EmbeddingDataset::global_view(std::size_t item, std::size_t slot) const {
    return row_at(global_views, item * n_global + slot, dim);
}

std::span<const float> EmbeddingDataset::local_view(std::size_t item, std::size_t slot) const {
    return row_at(local_views, item * n_local + slot, dim);
}

RowMatrixXf EmbeddingDataset::canonical_matrix() const {
    return gather_rows(canonical, n_items, 1, 0, dim);
}

void EmbeddingDataset::validate() const {
    if (dim < 2) throw FormatError("EMB1: dim must be >= 2");
    if (n_global < 1) throw FormatError("EMB1: n_global must be >= 1");
    const std::size_t n = n_items;
    if (canonical.size() != n * dim) throw FormatError("EMB1: canonical block size mismatch");
    if (global_views.size() != n * n_global * dim) {
        throw FormatError("EMB1: global block size mismatch");
    }
    if (local_views.size() != n * n_local * dim) {
        throw FormatError("EMB1: local block size mismatch");
    }
    if (labels) {
        if (labels->size() != n) throw FormatError("EMB1: labels count mismatch");
        for (ClassId y : *labels) {
            if (y < 0 || static_cast<std::uint32_t>(y) >= n_classes) {
                throw FormatError("EMB1: label " + std::to_string(y) + " outside [0, n_classes=" +
                                  std::to_string(n_classes) + ")");
            }
        }
    }
}

RowMatrixXf ViewBatch::global_matrix(std::size_t which) const {
    return gather_rows(global, size(), 2, which, dim);
}

RowMatrixXf ViewBatch::local_matrix(std::size_t which) const {
    return gather_rows(local, size(), n_local, which, dim);
}

void normalize_rows(std::span<float> values, std::size_t dim, const char* block_name) {
    for (std::size_t start = 0; start + dim <= values.size(); start += dim) {
        double sq = 0.0;
        for (std::size_t c = 0; c < dim; ++c) {
            const double v = values[start + c];
            sq += v * v;
        }
        const double norm = std::sqrt(sq);
        if (!std::isfinite(norm) || norm == 0.0) {
            throw FormatError(std::string("EMB1: zero or non-finite row in ") + block_name +
                              " block");
        }
        if (std::abs(norm - 1.0) > 1e-6) {
            for (std::size_t c = 0; c < dim; ++c) {
                values[start + c] = static_cast<float>(values[start + c] / norm);
            }
        }
    }
}

EmbeddingDataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    Reader r(std::move(bytes));
    if (r.remaining() < kHeaderBytes) throw FormatError("EMB1: truncated file while reading header");
    char magic[4];
    for (char& c : magic) c = r.read<char>("magic");
    if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("EMB1: bad magic");

    const auto version = r.read<std::uint32_t>("version");
    if (version != kVersion) {
        throw FormatError("EMB1: unsupported version " + std::to_string(version));
    }
    EmbeddingDataset ds;
    ds.n_items = r.read<std::uint32_t>("n_items");
    ds.dim = r.read<std::uint32_t>("dim");
    ds.n_global = r.read<std::uint32_t>("n_global");
    ds.n_local = r.read<std::uint32_t>("n_local");
    ds.n_classes = r.read<std::uint32_t>("n_classes");
    const auto has_labels = r.read<std::uint8_t>("has_labels");
    for (int i = 0; i < 3; ++i) r.read<std::uint8_t>("pad");

    if (has_labels > 1) throw FormatError("EMB1: has_labels must be 0 or 1");
    if (ds.dim < 2) throw FormatError("EMB1: dim must be >= 2");
    if (ds.n_global < 1) throw FormatError("EMB1: n_global must be >= 1");

    const std::size_t n = ds.n_items;
    const std::size_t expected = (has_labels ? n * sizeof(ClassId) : 0) +
                                 n * ds.dim * (1 + ds.n_global + ds.n_local) * sizeof(float);
    // a short payload is reported by the block reads below, naming the block
    if (r.remaining() > expected) {
        throw FormatError("EMB1: dimension counts do not match payload size (trailing bytes)");
    }

    if (has_labels) {
        std::vector<ClassId> labels;
        r.read_array(labels, n, "labels");
        ds.labels = std::move(labels);
    }
    r.read_array(ds.canonical, n * ds.dim, "canonical block");
    r.read_array(ds.global_views, n * ds.n_global * ds.dim, "global block");
    r.read_array(ds.local_views, n * ds.n_local * ds.dim, "local block");

    normalize_rows(ds.canonical, ds.dim, "canonical");
    normalize_rows(ds.global_views, ds.dim, "global");
    normalize_rows(ds.local_views, ds.dim, "local");
    ds.validate();
    return ds;
}

void save_dataset(const EmbeddingDataset& ds, const std::filesystem::path& path) {
    ds.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write dataset " + path.string());

    out.write(kMagic, 4);
    write_pod(out, kVersion);
    write_pod(out, ds.n_items);
    write_pod(out, ds.dim);
    write_pod(out, ds.n_global);
    write_pod(out, ds.n_local);
    write_pod(out, ds.n_classes);
    write_pod(out, static_cast<std::uint8_t>(ds.has_labels() ? 1 : 0));
    const std::uint8_t pad[3] = {0, 0, 0};
    out.write(reinterpret_cast<const char*>(pad), 3);
    if (ds.labels) write_array(out, *ds.labels);
    write_array(out, ds.canonical);
    write_array(out, ds.global_views);
    write_array(out, ds.local_views);
    if (!out) throw IoError("write failed for " + path.string());
}

std::filesystem::path manifest_path(const std::filesystem::path& dataset_path) {
    return std::filesystem::path(dataset_path.string() + ".json");
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& dataset_path) {
    const auto path = manifest_path(dataset_path);
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest " + path.string());
    nlohmann::json j{{"class_names", manifest.class_names}, {"source", manifest.source}};
    out << j.dump(2) << '\n';
}

std::optional<DatasetManifest> load_manifest(const std::filesystem::path& dataset_path) {
    const auto path = manifest_path(dataset_path);
    std::ifstream in(path);
    if (!in) return std::nullopt;
    try {
        const auto j = nlohmann::json::parse(in);
        DatasetManifest m;
        m.class_names = j.value("class_names", std::vector<std::string>{});
        m.source = j.value("source", std::string{});
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest " + path.string() + ": " + e.what());
    }
}

ViewBatch sample_view_batch(const EmbeddingDataset& ds, std::span<const std::uint32_t> indices,
                            std::uint32_t n_local, Rng& rng) {
    require(n_local <= ds.n_local, "sample_view_batch: n_local exceeds the local view pool");
    ViewBatch batch;
    batch.dim = ds.dim;
    batch.n_local = n_local;
    batch.item_indices.assign(indices.begin(), indices.end());
    batch.global.reserve(indices.size() * 2 * ds.dim);
    batch.local.reserve(indices.size() * n_local * ds.dim);

    std::vector<std::uint32_t> local_slots(ds.n_local);
    for (std::uint32_t item : indices) {
        if (item >= ds.n_items) {
            throw ContractError("sample_view_batch: index " + std::to_string(item) +
                                " out of range");
        }
        std::uint32_t first = 0;
        std::uint32_t second = 0;
        if (ds.n_global >= 2) {
            std::uniform_int_distribution<std::uint32_t> pick(0, ds.n_global - 1);
            first = pick(rng);
            std::uniform_int_distribution<std::uint32_t> pick_other(0, ds.n_global - 2);
            second = pick_other(rng);
            if (second >= first) ++second;
        }
        for (std::uint32_t slot : {first, second}) {
            const auto v = ds.global_view(item, slot);
            batch.global.insert(batch.global.end(), v.begin(), v.end());
        }

        // partial Fisher-Yates over the local pool
        std::iota(local_slots.begin(), local_slots.end(), 0u);
        for (std::uint32_t j = 0; j < n_local; ++j) {
            std::uniform_int_distribution<std::uint32_t> pick(j, ds.n_local - 1);
            std::swap(local_slots[j], local_slots[pick(rng)]);
            const auto v = ds.local_view(item, local_slots[j]);
            batch.local.insert(batch.local.end(), v.begin(), v.end());
        }
    }
    return batch;
}

EmbeddingDataset subset(const EmbeddingDataset& ds, std::span<const std::uint32_t> indices) {
    EmbeddingDataset out;
    out.n_items = static_cast<std::uint32_t>(indices.size());
    out.dim = ds.dim;
    out.n_global = ds.n_global;
    out.n_local = ds.n_local;
    out.n_classes = ds.n_classes;
    if (ds.labels) out.labels.emplace();
    const std::size_t d = ds.dim;
    for (std::uint32_t i : indices) {
        require(i < ds.n_items, "subset: index out of range");
        if (ds.labels) out.labels->push_back((*ds.labels)[i]);
        const auto c = ds.canonical_row(i);
        out.canonical.insert(out.canonical.end(), c.begin(), c.end());
        const auto g = ds.global_views.begin() + static_cast<std::ptrdiff_t>(i * ds.n_global * d);
        out.global_views.insert(out.global_views.end(), g, g + static_cast<std::ptrdiff_t>(ds.n_global * d));
        const auto l = ds.local_views.begin() + static_cast<std::ptrdiff_t>(i * ds.n_local * d);
        out.local_views.insert(out.local_views.end(), l, l + static_cast<std::ptrdiff_t>(ds.n_local * d));
    }
    return out;
}

std::pair<EmbeddingDataset, EmbeddingDataset> split_stratified(const EmbeddingDataset& ds,
                                                               double eval_fraction, Rng& rng) {
    require(ds.has_labels(), "split_stratified: dataset has no labels");
    require(eval_fraction >= 0.0 && eval_fraction < 1.0, "split_stratified: fraction in [0,1)");
    std::map<ClassId, std::vector<std::uint32_t>> by_class;
    for (std::uint32_t i = 0; i < ds.n_items; ++i) by_class[(*ds.labels)[i]].push_back(i);

    std::vector<std::uint32_t> train_idx;
    std::vector<std::uint32_t> eval_idx;
    for (auto& [label, members] : by_class) {
        std::shuffle(members.begin(), members.end(), rng);
        const auto n_eval = static_cast<std::size_t>(eval_fraction * static_cast<double>(members.size()));
        eval_idx.insert(eval_idx.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_eval));
        train_idx.insert(train_idx.end(), members.begin() + static_cast<std::ptrdiff_t>(n_eval), members.end());
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(eval_idx.begin(), eval_idx.end());
    return {subset(ds, train_idx), subset(ds, eval_idx)};
}

} // namespace protopaws
