#pragma once

#include <memory>
#include <string>

#include "vsa/tensor.hpp"

namespace vsa {

struct Sample {
    Tensor image;  // [S, S, 3], values in [0, 1]
    long label = 0;
};

class Dataset {
public:
    virtual ~Dataset() = default;
    virtual long size() const = 0;
    virtual Sample get(long index) const = 0;
    virtual long num_classes() const = 0;
    virtual long image_size() const = 0;
};

// One filled axis-aligned rectangle over uniform background noise; the label
// is the side-length bucket the rectangle was drawn from.
struct SyntheticSpec {
    long img_size = 64;
    long num_classes = 4;
    Scalar noise = 0.3;
    long count = 8192;  // stream length (before the parity split)
    uint64_t seed = 42;

    // inclusive side-length range per class
    std::vector<std::pair<long, long>> buckets() const;
};

enum class Split { kTrain, kVal, kAll };

class SyntheticDataset : public Dataset {
public:
    SyntheticDataset(SyntheticSpec spec, Split split);

    long size() const override;
    Sample get(long index) const override;
    long num_classes() const override { return spec_.num_classes; }
    long image_size() const override { return spec_.img_size; }

    // Deterministic generation keyed by the stream index alone.
    Sample stream_sample(long stream_index) const;
    const SyntheticSpec& spec() const { return spec_; }

private:
    SyntheticSpec spec_;
    Split split_;
};

// Standard binary batches: data_batch_1..5.bin + test_batch.bin, each record
// one label byte plus 3072 pixel bytes.
class Cifar10Dataset : public Dataset {
public:
    Cifar10Dataset(const std::string& dir, Split split);

    long size() const override;
    Sample get(long index) const override;
    long num_classes() const override { return 10; }
    long image_size() const override { return 32; }

private:
    std::vector<uint8_t> records_;  // 3073 bytes each
    long count_ = 0;
};

// Writes `count` synthetic samples as a small binary file (magic "VSADATA1",
// u32 size, u32 classes, u64 count, then records of label byte + RGB bytes).
void write_synthetic_file(const std::string& path, const SyntheticSpec& spec, long count);

}  // namespace vsa
