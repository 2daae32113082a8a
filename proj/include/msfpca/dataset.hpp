#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace msfpca {

// One row of long-format input: a single measurement of one outcome for one
// subject at one (original-units) time.
struct ObservationRecord {
    std::string subject_id;
    std::string block_id;
    double time = 0.0;
    double value = 0.0;
};

struct Series {
    std::vector<double> times;   // sorted ascending
    std::vector<double> values;  // parallel to times
    std::size_t size() const { return times.size(); }
    bool empty() const { return times.empty(); }
};

struct BlockScaling {
    double mean = 0.0;
    double sd = 1.0;
};

// Multi-block longitudinal data. Blocks and subjects keep first-appearance
// order. series(i, p) may be empty: a subject can miss a block entirely.
// Immutable after construction; safe to share across threads.
class MultiBlockDataset {
public:
    MultiBlockDataset() = default;

    const std::vector<std::string>& blocks() const { return blocks_; }
    const std::vector<std::string>& subjects() const { return subjects_; }
    std::size_t n_blocks() const { return blocks_.size(); }
    std::size_t n_subjects() const { return subjects_.size(); }

    const Series& series(std::size_t subject, std::size_t block) const {
        return series_[subject * blocks_.size() + block];
    }

    bool standardized() const { return standardized_; }
    const std::vector<BlockScaling>& scaling() const { return scaling_; }
    std::pair<double, double> time_range() const { return time_range_; }

    // observation counts
    std::size_t count(std::size_t subject, std::size_t block) const {
        return series(subject, block).size();
    }
    std::size_t count(std::size_t subject) const;
    std::size_t total_count() const;

    // Returns a copy with per-block pooled mean 0 / sd 1 (N-1 denominator) and
    // times rescaled affinely from the global [min,max] to [0,1].
    MultiBlockDataset standardize_and_rescale() const;

    // Inverse of standardize_and_rescale; restores original values and times.
    MultiBlockDataset unstandardize() const;

    // Flattens back to long format (block order, then subject, then time).
    std::vector<ObservationRecord> to_records() const;

    friend MultiBlockDataset load_long_records(const std::vector<ObservationRecord>& rows);
    friend class DatasetBuilder;

private:
    std::vector<std::string> blocks_;
    std::vector<std::string> subjects_;
    std::vector<Series> series_;  // subject-major: [subject * P + block]
    std::vector<BlockScaling> scaling_;
    std::pair<double, double> time_range_{0.0, 1.0};
    bool standardized_ = false;
};

// Groups long-format rows into a dataset. Blocks and subjects are ordered by
// first appearance; per-series observations are sorted by time.
MultiBlockDataset load_long_records(const std::vector<ObservationRecord>& rows);

// Programmatic construction (used by the simulator); series are keyed by
// pre-registered subject/block indices.
class DatasetBuilder {
public:
    DatasetBuilder(std::vector<std::string> blocks, std::vector<std::string> subjects);
    void set_series(std::size_t subject, std::size_t block, Series s);
    void set_scaling(std::vector<BlockScaling> scaling, std::pair<double, double> time_range,
                     bool standardized);
    MultiBlockDataset build();

private:
    MultiBlockDataset d_;
    bool built_ = false;
};

// Long-format CSV with header subject_id,block_id,time,value. Blank lines are
// ignored.
std::vector<ObservationRecord> read_records_csv(const std::string& path);
void write_records_csv(const std::string& path, const MultiBlockDataset& dataset);

}  // namespace msfpca
