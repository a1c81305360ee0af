#include "qbdc/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

namespace qbdc::data {

namespace {

// Reads a big-endian u32, tracking the stream offset for diagnostics.
std::uint32_t read_u32_be(std::istream& in, std::size_t& offset) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) {
        throw std::runtime_error("idx: truncated file at byte offset " + std::to_string(offset));
    }
    offset += 4;
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

std::vector<std::uint8_t> read_bytes(std::istream& in, std::size_t n, std::size_t& offset) {
    std::vector<std::uint8_t> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) {
        throw std::runtime_error("idx: truncated file at byte offset " +
                                 std::to_string(offset + static_cast<std::size_t>(std::max<std::streamsize>(in.gcount(), 0))));
    }
    offset += n;
    return buf;
}

std::ifstream open_binary(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f.is_open()) throw std::runtime_error("idx: cannot open " + path);
    return f;
}

void write_u32_be(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<char*>(b), 4);
}

constexpr std::uint64_t kMaxElements = 1ull << 31;  // overflow guard on declared dimensions

}  // namespace

RawImages load_idx_images(std::istream& in) {
    std::size_t offset = 0;
    const std::uint32_t magic = read_u32_be(in, offset);
    if (magic != kIdxImagesMagic) {
        throw std::runtime_error("idx: wrong image magic at byte offset 0 (got 0x" +
                                 [&] {
                                     char buf[16];
                                     std::snprintf(buf, sizeof(buf), "%08x", magic);
                                     return std::string(buf);
                                 }() +
                                 ", want 0x00000803)");
    }
    RawImages raw;
    const std::uint32_t count = read_u32_be(in, offset);
    const std::uint32_t rows = read_u32_be(in, offset);
    const std::uint32_t cols = read_u32_be(in, offset);
    const std::uint64_t total = std::uint64_t(count) * rows * cols;
    if (count == 0 || rows == 0 || cols == 0 || total > kMaxElements) {
        throw std::runtime_error("idx: implausible dimensions at byte offset 4 (" + std::to_string(count) + "x" +
                                 std::to_string(rows) + "x" + std::to_string(cols) + ")");
    }
    raw.count = static_cast<int>(count);
    raw.rows = static_cast<int>(rows);
    raw.cols = static_cast<int>(cols);
    raw.pixels = read_bytes(in, static_cast<std::size_t>(total), offset);
    return raw;
}

RawImages load_idx_images(const std::string& path) {
    std::ifstream f = open_binary(path);
    return load_idx_images(f);
}

std::vector<int> load_idx_labels(std::istream& in) {
    std::size_t offset = 0;
    const std::uint32_t magic = read_u32_be(in, offset);
    if (magic != kIdxLabelsMagic) {
        throw std::runtime_error("idx: wrong label magic at byte offset 0");
    }
    const std::uint32_t count = read_u32_be(in, offset);
    if (count == 0 || count > kMaxElements) {
        throw std::runtime_error("idx: implausible label count at byte offset 4");
    }
    std::vector<std::uint8_t> bytes = read_bytes(in, count, offset);
    std::vector<int> labels(count);
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        if (bytes[i] >= 10) {
            throw std::runtime_error("idx: label byte out of range at byte offset " + std::to_string(8 + i));
        }
        labels[i] = bytes[i];
    }
    return labels;
}

std::vector<int> load_idx_labels(const std::string& path) {
    std::ifstream f = open_binary(path);
    return load_idx_labels(f);
}

void write_idx_images(std::ostream& out, const RawImages& raw) {
    write_u32_be(out, kIdxImagesMagic);
    write_u32_be(out, static_cast<std::uint32_t>(raw.count));
    write_u32_be(out, static_cast<std::uint32_t>(raw.rows));
    write_u32_be(out, static_cast<std::uint32_t>(raw.cols));
    out.write(reinterpret_cast<const char*>(raw.pixels.data()), static_cast<std::streamsize>(raw.pixels.size()));
}

void write_idx_images(const std::string& path, const RawImages& raw) {
    std::ofstream f(path, std::ios::binary);
    if (!f.is_open()) throw std::runtime_error("idx: cannot write " + path);
    write_idx_images(f, raw);
}

void write_idx_labels(std::ostream& out, const std::vector<int>& labels) {
    write_u32_be(out, kIdxLabelsMagic);
    write_u32_be(out, static_cast<std::uint32_t>(labels.size()));
    for (int l : labels) {
        const unsigned char b = static_cast<unsigned char>(l);
        out.write(reinterpret_cast<const char*>(&b), 1);
    }
}

void write_idx_labels(const std::string& path, const std::vector<int>& labels) {
    std::ofstream f(path, std::ios::binary);
    if (!f.is_open()) throw std::runtime_error("idx: cannot write " + path);
    write_idx_labels(f, labels);
}

Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path) {
    RawImages raw = load_idx_images(images_path);
    std::vector<int> labels = load_idx_labels(labels_path);
    if (static_cast<int>(labels.size()) != raw.count) {
        throw std::runtime_error("idx: image count " + std::to_string(raw.count) + " does not match label count " +
                                 std::to_string(labels.size()));
    }
    Dataset ds;
    ds.images = Tensor<float>({raw.count, raw.rows, raw.cols});
    for (std::size_t i = 0; i < raw.pixels.size(); ++i) {
        ds.images.data[i] = static_cast<float>(raw.pixels[i]) / 255.0f;
    }
    ds.labels = std::move(labels);
    ds.num_classes = 10;
    return ds;
}

RawImages dataset_to_raw(const Dataset& ds) {
    if (ds.images.rank() != 3) throw std::invalid_argument("dataset_to_raw: needs [N,H,W] images");
    RawImages raw;
    raw.count = ds.images.shape[0];
    raw.rows = ds.images.shape[1];
    raw.cols = ds.images.shape[2];
    raw.pixels.resize(ds.images.size());
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        const float v = ds.images.data[i];
        raw.pixels[i] = static_cast<std::uint8_t>(std::lround(std::min(std::max(v, 0.0f), 1.0f) * 255.0f));
    }
    return raw;
}

Subset Subset::all_of(const Dataset& d) {
    Subset s;
    s.ds = &d;
    s.indices.resize(static_cast<std::size_t>(d.count()));
    std::iota(s.indices.begin(), s.indices.end(), 0);
    s.labels = d.labels;
    return s;
}

Subset Subset::of(const Dataset& d, std::vector<int> idx) {
    Subset s;
    s.ds = &d;
    s.indices = std::move(idx);
    s.labels.reserve(s.indices.size());
    for (int i : s.indices) s.labels.push_back(d.labels.at(static_cast<std::size_t>(i)));
    return s;
}

std::pair<Dataset, Dataset> split(const Dataset& ds, const SplitSpec& spec) {
    if (spec.train_count < 0 || spec.validation_count < 0 ||
        spec.train_count + spec.validation_count > ds.count()) {
        throw std::invalid_argument("split: requested " + std::to_string(spec.train_count) + "+" +
                                    std::to_string(spec.validation_count) + " from " + std::to_string(ds.count()) +
                                    " samples");
    }
    std::vector<int> order(static_cast<std::size_t>(ds.count()));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(spec.seed);
    std::shuffle(order.begin(), order.end(), rng);

    auto take = [&](int from, int n) {
        Dataset out;
        std::vector<int> shape = ds.images.shape;
        shape[0] = n;
        out.images = Tensor<float>(shape);
        out.labels.resize(static_cast<std::size_t>(n));
        out.num_classes = ds.num_classes;
        const std::size_t stride = ds.images.size() / static_cast<std::size_t>(ds.count());
        for (int i = 0; i < n; ++i) {
            const int row = order[static_cast<std::size_t>(from + i)];
            std::copy_n(ds.images.data.data() + static_cast<std::size_t>(row) * stride, stride,
                        out.images.data.data() + static_cast<std::size_t>(i) * stride);
            out.labels[static_cast<std::size_t>(i)] = ds.labels[static_cast<std::size_t>(row)];
        }
        return out;
    };
    return {take(0, spec.train_count), take(spec.train_count, spec.validation_count)};
}

Dataset synthetic_blobs(int classes, int per_class, int dimension, double separation, std::uint64_t seed) {
    if (classes <= 0 || per_class <= 0 || dimension <= 0) {
        throw std::invalid_argument("blobs: counts and dimension must be positive");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);

    // Class centers: +-separation along coordinate axes for the first 2*dim
    // classes, seeded random directions beyond that.
    std::vector<std::vector<double>> centers(static_cast<std::size_t>(classes),
                                             std::vector<double>(static_cast<std::size_t>(dimension), 0.0));
    for (int c = 0; c < classes; ++c) {
        auto& ctr = centers[static_cast<std::size_t>(c)];
        if (c < 2 * dimension) {
            ctr[static_cast<std::size_t>(c % dimension)] = (c < dimension ? 1.0 : -1.0) * separation;
        } else {
            double norm = 0.0;
            for (auto& v : ctr) {
                v = noise(rng);
                norm += v * v;
            }
            norm = std::sqrt(std::max(norm, 1e-12));
            for (auto& v : ctr) v = v / norm * separation;
        }
    }

    const int n = classes * per_class;
    Dataset ds;
    ds.images = Tensor<float>({n, 1, dimension});
    ds.labels.resize(static_cast<std::size_t>(n));
    ds.num_classes = classes;

    std::vector<double> values(static_cast<std::size_t>(n) * dimension);
    for (int c = 0; c < classes; ++c) {
        for (int s = 0; s < per_class; ++s) {
            const int row = c * per_class + s;
            ds.labels[static_cast<std::size_t>(row)] = c;
            for (int d = 0; d < dimension; ++d) {
                values[static_cast<std::size_t>(row) * dimension + d] =
                    centers[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)] + noise(rng);
            }
        }
    }

    // Affine map into [0,1]; keeps cluster geometry (and separability) intact.
    double lo = values[0], hi = values[0];
    for (double v : values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi > lo ? hi - lo : 1.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        ds.images.data[i] = static_cast<float>((values[i] - lo) / span);
    }
    return ds;
}

}  // namespace qbdc::data
