#include "fmrgc/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "fmrgc/errors.hpp"
#include "fmrgc/rng.hpp"

namespace fmrgc {

namespace {
constexpr int kCifarRecordBytes = 3073;  // 1 label byte + 3*1024 pixel bytes
constexpr int kCifarPixels = 3072;
}  // namespace

Dataset Dataset::subset(const std::vector<int>& indices) const {
    Dataset out;
    out.num_classes = num_classes;
    std::vector<int> shape = images.shape();
    shape[0] = static_cast<int>(indices.size());
    const std::size_t chunk = images.size() / static_cast<std::size_t>(images.dim(0));
    Tensor imgs(shape);
    out.labels.reserve(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        std::copy_n(images.data() + static_cast<std::size_t>(indices[i]) * chunk, chunk,
                    imgs.data() + i * chunk);
        out.labels.push_back(labels[static_cast<std::size_t>(indices[i])]);
    }
    out.images = std::move(imgs);
    return out;
}

std::pair<Tensor, std::vector<int>> Dataset::gather(const std::vector<int>& order, int start,
                                                    int count) const {
    std::vector<int> shape = images.shape();
    shape[0] = count;
    const std::size_t chunk = images.size() / static_cast<std::size_t>(images.dim(0));
    Tensor batch(shape);
    std::vector<int> y(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const int src = order[static_cast<std::size_t>(start + i)];
        std::copy_n(images.data() + static_cast<std::size_t>(src) * chunk, chunk,
                    batch.data() + static_cast<std::size_t>(i) * chunk);
        y[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(src)];
    }
    return {std::move(batch), std::move(y)};
}

Dataset load_cifar10_records(const std::string& file) {
    std::ifstream in(file, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open " + file);
    const std::streamoff bytes = in.tellg();
    if (bytes % kCifarRecordBytes != 0)
        throw TruncatedFileError(file + ": length " + std::to_string(bytes) +
                                 " is not a multiple of 3073");
    const int n = static_cast<int>(bytes / kCifarRecordBytes);
    in.seekg(0);

    Dataset out;
    out.num_classes = 10;
    out.images = Tensor({n, 3, 32, 32});
    out.labels.resize(static_cast<std::size_t>(n));
    std::vector<unsigned char> record(kCifarRecordBytes);
    double scale[256];
    for (int b = 0; b < 256; ++b) scale[b] = b / 255.0;
    for (int i = 0; i < n; ++i) {
        in.read(reinterpret_cast<char*>(record.data()), kCifarRecordBytes);
        if (!in) throw TruncatedFileError(file + ": short read at record " + std::to_string(i));
        const int label = record[0];
        if (label > 9) throw BadLabelError(file + ": label " + std::to_string(label) +
                                           " at record " + std::to_string(i));
        out.labels[static_cast<std::size_t>(i)] = label;
        double* dst = out.images.data() + static_cast<std::size_t>(i) * kCifarPixels;
        for (int p = 0; p < kCifarPixels; ++p) dst[p] = scale[record[static_cast<std::size_t>(p) + 1]];
    }
    return out;
}

namespace {

Dataset concat(std::vector<Dataset> parts) {
    int total = 0;
    for (const Dataset& d : parts) total += d.size();
    Dataset out;
    out.num_classes = parts.front().num_classes;
    std::vector<int> shape = parts.front().images.shape();
    shape[0] = total;
    Tensor imgs(shape);
    std::size_t offset = 0;
    for (Dataset& d : parts) {
        std::copy_n(d.images.data(), d.images.size(), imgs.data() + offset);
        offset += d.images.size();
        out.labels.insert(out.labels.end(), d.labels.begin(), d.labels.end());
    }
    out.images = std::move(imgs);
    return out;
}

}  // namespace

std::pair<Dataset, Dataset> load_cifar10(const DatasetSpec& spec) {
    namespace fs = std::filesystem;
    std::vector<Dataset> train_parts;
    for (int i = 1; i <= 5; ++i) {
        const fs::path p = fs::path(spec.path) / ("data_batch_" + std::to_string(i) + ".bin");
        if (fs::exists(p)) train_parts.push_back(load_cifar10_records(p.string()));
    }
    if (train_parts.empty())
        throw IoError("no data_batch_*.bin under " + spec.path);
    Dataset train = concat(std::move(train_parts));

    const fs::path test_path = fs::path(spec.path) / "test_batch.bin";
    if (!fs::exists(test_path)) throw IoError("missing " + test_path.string());
    Dataset test = load_cifar10_records(test_path.string());
    return {std::move(train), std::move(test)};
}

std::vector<int> deterministic_subset(std::uint64_t seed, int k, int n) {
    if (k > n) throw BadConfigError("subset size exceeds available records");
    std::vector<int> pool(static_cast<std::size_t>(n));
    std::iota(pool.begin(), pool.end(), 0);
    Rng rng(Rng::mix(seed, 0x5e7ec7ULL));
    // Partial Fisher-Yates: the first k entries are the sample.
    for (int i = 0; i < k; ++i) {
        const int j = i + static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(n - i));
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    pool.resize(static_cast<std::size_t>(k));
    return pool;
}

Dataset make_synthetic(const SyntheticSpec& spec, std::uint64_t stream) {
    if (spec.classes < 2) throw BadConfigError("synthetic: needs at least 2 classes");
    const int size = spec.image_size;
    const int n = spec.classes * spec.per_class;

    // Fixed per-class template: a Gaussian bump on a ring, with a per-class,
    // per-channel amplitude pattern so classes differ in color as well as
    // position.
    auto template_value = [&](int cls, int ch, int i, int j) {
        const double angle = 2.0 * M_PI * cls / spec.classes;
        const double radius = size / 4.0;
        const double cy = size / 2.0 + radius * std::sin(angle);
        const double cx = size / 2.0 + radius * std::cos(angle);
        const double spread = size / 8.0;
        const double d2 = (i - cy) * (i - cy) + (j - cx) * (j - cx);
        const double amp = 0.35 + 0.5 * (((cls * 7 + ch * 3) % 5) / 4.0);
        return amp * std::exp(-d2 / (2.0 * spread * spread));
    };

    Dataset out;
    out.num_classes = spec.classes;
    out.images = Tensor({n, 3, size, size});
    out.labels.resize(static_cast<std::size_t>(n));
    Rng rng(Rng::mix(spec.seed, stream));
    std::size_t idx = 0;
    int sample = 0;
    for (int cls = 0; cls < spec.classes; ++cls) {
        for (int rep = 0; rep < spec.per_class; ++rep, ++sample) {
            out.labels[static_cast<std::size_t>(sample)] = cls;
            for (int ch = 0; ch < 3; ++ch)
                for (int i = 0; i < size; ++i)
                    for (int j = 0; j < size; ++j) {
                        double v = template_value(cls, ch, i, j);
                        if (spec.noise > 0.0) v += spec.noise * rng.normal();
                        out.images[idx++] = std::min(std::max(v, 0.0), 1.0);
                    }
        }
    }
    return out;
}

std::pair<Dataset, Dataset> load_dataset(const DatasetSpec& spec) {
    Dataset train, test;
    if (spec.source == DatasetSpec::Source::Cifar10Binary) {
        auto [tr, te] = load_cifar10(spec);
        train = std::move(tr);
        test = std::move(te);
    } else {
        SyntheticSpec synth = spec.synthetic;
        train = make_synthetic(synth, /*stream=*/0);
        test = make_synthetic(synth, /*stream=*/1);
    }
    if (spec.train_size > train.size() || spec.test_size > test.size())
        throw BadConfigError("requested subset exceeds available records");
    Dataset train_sub = train.subset(deterministic_subset(spec.seed, spec.train_size, train.size()));
    Dataset test_sub = test.subset(deterministic_subset(Rng::mix(spec.seed, 1), spec.test_size, test.size()));
    return {std::move(train_sub), std::move(test_sub)};
}

}  // namespace fmrgc
