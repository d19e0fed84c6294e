#include "vsa/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "vsa/rng.hpp"

namespace vsa {

std::vector<std::pair<long, long>> SyntheticSpec::buckets() const {
    if (num_classes < 2) throw ConfigError("synthetic task needs at least 2 classes");
    const double s = static_cast<double>(img_size);
    std::vector<std::pair<long, long>> out;
    if (num_classes == 4) {
        // canonical buckets; at size 64 these are 4-8, 12-16, 24-32, 40-56 px
        const double fr[4][2] = {{1.0 / 16, 1.0 / 8}, {3.0 / 16, 1.0 / 4},
                                 {3.0 / 8, 1.0 / 2},  {5.0 / 8, 7.0 / 8}};
        for (auto& f : fr) {
            out.emplace_back(std::max(1L, std::lround(f[0] * s)),
                             std::max(1L, std::lround(f[1] * s)));
        }
    } else {
        // evenly spaced slots over [s/16, 7s/8] with a gap between neighbors
        const double lo = s / 16, hi = 7 * s / 8;
        const double slot = (hi - lo) / num_classes;
        for (long k = 0; k < num_classes; ++k) {
            const long a = std::max(1L, std::lround(lo + k * slot));
            const long b = std::max(a, std::lround(lo + k * slot + 0.6 * slot));
            out.emplace_back(a, b);
        }
    }
    for (size_t k = 0; k + 1 < out.size(); ++k) {
        if (out[k].second >= out[k + 1].first) {
            throw ConfigError("synthetic size buckets overlap: [" +
                              std::to_string(out[k].first) + "," + std::to_string(out[k].second) +
                              "] vs [" + std::to_string(out[k + 1].first) + "," +
                              std::to_string(out[k + 1].second) + "]");
        }
    }
    return out;
}

SyntheticDataset::SyntheticDataset(SyntheticSpec spec, Split split)
    : spec_(std::move(spec)), split_(split) {
    spec_.buckets();  // validates
    if (spec_.img_size < 8) throw ConfigError("synthetic image size too small");
}

long SyntheticDataset::size() const {
    return split_ == Split::kAll ? spec_.count : spec_.count / 2;
}

Sample SyntheticDataset::get(long index) const {
    if (index < 0 || index >= size()) {
        throw ContractError("dataset index " + std::to_string(index) + " out of range");
    }
    switch (split_) {
        case Split::kTrain:
            return stream_sample(2 * index);
        case Split::kVal:
            return stream_sample(2 * index + 1);
        default:
            return stream_sample(index);
    }
}

Sample SyntheticDataset::stream_sample(long stream_index) const {
    const auto buckets = spec_.buckets();
    const long s = spec_.img_size;
    // even/odd pairs see the same label cycle so both splits stay balanced
    const long label = (stream_index / 2) % spec_.num_classes;
    Rng rng(Rng::mix(spec_.seed, static_cast<uint64_t>(stream_index)));

    Sample sample;
    sample.label = label;
    sample.image = Tensor::zeros({s, s, 3});
    Scalar* px = sample.image.data_mut().data();
    for (long i = 0; i < s * s * 3; ++i) px[i] = static_cast<Scalar>(rng.uniform(0.0, spec_.noise));

    const auto [lo, hi] = buckets[static_cast<size_t>(label)];
    const long side = lo + static_cast<long>(rng.next_below(static_cast<uint64_t>(hi - lo + 1)));
    const long y0 = static_cast<long>(rng.next_below(static_cast<uint64_t>(s - side + 1)));
    const long x0 = static_cast<long>(rng.next_below(static_cast<uint64_t>(s - side + 1)));
    for (long y = y0; y < y0 + side; ++y) {
        for (long x = x0; x < x0 + side; ++x) {
            Scalar* cell = px + (y * s + x) * 3;
            cell[0] = cell[1] = cell[2] = 1.0;
        }
    }
    return sample;
}

namespace {

constexpr long kCifarRecord = 3073;
constexpr long kCifarPerFile = 10000;
constexpr long kCifarFileBytes = kCifarRecord * kCifarPerFile;  // 30730000

std::vector<uint8_t> read_batch_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw FormatError("cannot open CIFAR-10 batch '" + path + "'");
    const auto bytes = static_cast<long>(in.tellg());
    if (bytes != kCifarFileBytes) {
        throw FormatError("CIFAR-10 batch '" + path + "' has " + std::to_string(bytes) +
                          " bytes, expected " + std::to_string(kCifarFileBytes));
    }
    std::vector<uint8_t> data(static_cast<size_t>(bytes));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(data.data()), bytes);
    if (!in) throw FormatError("short read from '" + path + "'");
    return data;
}

}  // namespace

Cifar10Dataset::Cifar10Dataset(const std::string& dir, Split split) {
    std::vector<std::string> files;
    if (split == Split::kTrain || split == Split::kAll) {
        for (int i = 1; i <= 5; ++i) files.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
    }
    if (split == Split::kVal || split == Split::kAll) {
        files.push_back(dir + "/test_batch.bin");
    }
    for (const std::string& f : files) {
        auto batch = read_batch_file(f);
        records_.insert(records_.end(), batch.begin(), batch.end());
    }
    count_ = static_cast<long>(records_.size()) / kCifarRecord;
    for (long i = 0; i < count_; ++i) {
        const uint8_t label = records_[static_cast<size_t>(i * kCifarRecord)];
        if (label > 9) {
            throw FormatError("CIFAR-10 record " + std::to_string(i) + " has label byte " +
                              std::to_string(label));
        }
    }
}

long Cifar10Dataset::size() const { return count_; }

Sample Cifar10Dataset::get(long index) const {
    if (index < 0 || index >= count_) {
        throw ContractError("dataset index " + std::to_string(index) + " out of range");
    }
    const uint8_t* rec = records_.data() + index * kCifarRecord;
    Sample sample;
    sample.label = rec[0];
    sample.image = Tensor::zeros({32, 32, 3});
    Scalar* px = sample.image.data_mut().data();
    for (long y = 0; y < 32; ++y) {
        for (long x = 0; x < 32; ++x) {
            for (long c = 0; c < 3; ++c) {
                px[(y * 32 + x) * 3 + c] =
                    static_cast<Scalar>(rec[1 + c * 1024 + y * 32 + x]) / Scalar(255);
            }
        }
    }
    return sample;
}

void write_synthetic_file(const std::string& path, const SyntheticSpec& spec, long count) {
    SyntheticDataset ds(spec, Split::kAll);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    out.write("VSADATA1", 8);
    const uint32_t size32 = static_cast<uint32_t>(spec.img_size);
    const uint32_t classes32 = static_cast<uint32_t>(spec.num_classes);
    const uint64_t count64 = static_cast<uint64_t>(count);
    out.write(reinterpret_cast<const char*>(&size32), 4);
    out.write(reinterpret_cast<const char*>(&classes32), 4);
    out.write(reinterpret_cast<const char*>(&count64), 8);
    std::vector<uint8_t> row(static_cast<size_t>(spec.img_size * spec.img_size * 3));
    for (long i = 0; i < count; ++i) {
        Sample s = ds.stream_sample(i);
        const uint8_t label = static_cast<uint8_t>(s.label);
        out.write(reinterpret_cast<const char*>(&label), 1);
        auto data = s.image.data();
        for (size_t j = 0; j < row.size(); ++j) {
            row[j] = static_cast<uint8_t>(std::lround(std::clamp(data[j], Scalar(0), Scalar(1)) * 255));
        }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw FormatError("write failed for '" + path + "'");
}

}  // namespace vsa
