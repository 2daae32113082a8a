#include "msfpca/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "msfpca/errors.hpp"

namespace msfpca {

std::size_t MultiBlockDataset::count(std::size_t subject) const {
    std::size_t n = 0;
    for (std::size_t p = 0; p < blocks_.size(); ++p) n += count(subject, p);
    return n;
}

std::size_t MultiBlockDataset::total_count() const {
    std::size_t n = 0;
    for (const auto& s : series_) n += s.size();
    return n;
}

MultiBlockDataset load_long_records(const std::vector<ObservationRecord>& rows) {
    if (rows.empty()) throw EmptyInput("no observation records");

    MultiBlockDataset d;
    std::unordered_map<std::string, std::size_t> block_index;
    std::unordered_map<std::string, std::size_t> subject_index;

    for (const auto& r : rows) {
        if (!std::isfinite(r.time) || !std::isfinite(r.value))
            throw NonFiniteValue("subject " + r.subject_id + ", block " + r.block_id);
        if (block_index.emplace(r.block_id, d.blocks_.size()).second)
            d.blocks_.push_back(r.block_id);
        if (subject_index.emplace(r.subject_id, d.subjects_.size()).second)
            d.subjects_.push_back(r.subject_id);
    }

    const std::size_t P = d.blocks_.size();
    d.series_.resize(d.subjects_.size() * P);
    for (const auto& r : rows) {
        Series& s = d.series_[subject_index[r.subject_id] * P + block_index[r.block_id]];
        s.times.push_back(r.time);
        s.values.push_back(r.value);
    }

    double tmin = std::numeric_limits<double>::infinity();
    double tmax = -tmin;
    for (std::size_t i = 0; i < d.subjects_.size(); ++i) {
        for (std::size_t p = 0; p < P; ++p) {
            Series& s = d.series_[i * P + p];
            if (s.empty()) continue;
            std::vector<std::size_t> order(s.size());
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::sort(order.begin(), order.end(),
                      [&](std::size_t a, std::size_t b) { return s.times[a] < s.times[b]; });
            Series sorted;
            sorted.times.reserve(s.size());
            sorted.values.reserve(s.size());
            for (std::size_t k : order) {
                if (!sorted.times.empty() && sorted.times.back() == s.times[k])
                    throw DuplicateObservation("subject " + d.subjects_[i] + ", block " +
                                               d.blocks_[p] + ", time " +
                                               std::to_string(s.times[k]));
                sorted.times.push_back(s.times[k]);
                sorted.values.push_back(s.values[k]);
            }
            s = std::move(sorted);
            tmin = std::min(tmin, s.times.front());
            tmax = std::max(tmax, s.times.back());
        }
    }

    d.scaling_.assign(P, BlockScaling{});
    d.time_range_ = {tmin, tmax};
    d.standardized_ = false;
    return d;
}

MultiBlockDataset MultiBlockDataset::standardize_and_rescale() const {
    const std::size_t P = blocks_.size();
    MultiBlockDataset out = *this;

    if (!(time_range_.second > time_range_.first))
        throw DegenerateTimeRange("global time range [" + std::to_string(time_range_.first) +
                                  ", " + std::to_string(time_range_.second) + "]");
    const double t0 = time_range_.first;
    const double span = time_range_.second - time_range_.first;

    out.scaling_.assign(P, BlockScaling{});
    for (std::size_t p = 0; p < P; ++p) {
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < subjects_.size(); ++i)
            for (double v : series(i, p).values) {
                sum += v;
                ++n;
            }
        if (n == 0) throw EmptyInput("block " + blocks_[p] + " has no observations");
        const double m = sum / static_cast<double>(n);
        double ss = 0.0;
        for (std::size_t i = 0; i < subjects_.size(); ++i)
            for (double v : series(i, p).values) ss += (v - m) * (v - m);
        const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
        if (!(sd > 0.0)) throw ZeroVariance("block " + blocks_[p]);
        out.scaling_[p] = {m, sd};
    }

    for (std::size_t i = 0; i < subjects_.size(); ++i) {
        for (std::size_t p = 0; p < P; ++p) {
            Series& s = out.series_[i * P + p];
            for (double& t : s.times) t = (t - t0) / span;
            for (double& v : s.values) v = (v - out.scaling_[p].mean) / out.scaling_[p].sd;
        }
    }
    out.standardized_ = true;
    return out;
}

MultiBlockDataset MultiBlockDataset::unstandardize() const {
    if (!standardized_) throw InvalidArgument("dataset is not standardized");
    const std::size_t P = blocks_.size();
    MultiBlockDataset out = *this;
    const double t0 = time_range_.first;
    const double span = time_range_.second - time_range_.first;
    for (std::size_t i = 0; i < subjects_.size(); ++i) {
        for (std::size_t p = 0; p < P; ++p) {
            Series& s = out.series_[i * P + p];
            for (double& t : s.times) t = t0 + t * span;
            for (double& v : s.values) v = v * scaling_[p].sd + scaling_[p].mean;
        }
    }
    out.scaling_.assign(P, BlockScaling{});
    out.standardized_ = false;
    return out;
}

std::vector<ObservationRecord> MultiBlockDataset::to_records() const {
    std::vector<ObservationRecord> rows;
    rows.reserve(total_count());
    for (std::size_t p = 0; p < blocks_.size(); ++p)
        for (std::size_t i = 0; i < subjects_.size(); ++i) {
            const Series& s = series(i, p);
            for (std::size_t k = 0; k < s.size(); ++k)
                rows.push_back({subjects_[i], blocks_[p], s.times[k], s.values[k]});
        }
    return rows;
}

DatasetBuilder::DatasetBuilder(std::vector<std::string> blocks, std::vector<std::string> subjects) {
    d_.blocks_ = std::move(blocks);
    d_.subjects_ = std::move(subjects);
    d_.series_.resize(d_.blocks_.size() * d_.subjects_.size());
    d_.scaling_.assign(d_.blocks_.size(), BlockScaling{});
}

void DatasetBuilder::set_series(std::size_t subject, std::size_t block, Series s) {
    d_.series_[subject * d_.blocks_.size() + block] = std::move(s);
}

void DatasetBuilder::set_scaling(std::vector<BlockScaling> scaling,
                                 std::pair<double, double> time_range, bool standardized) {
    d_.scaling_ = std::move(scaling);
    d_.time_range_ = time_range;
    d_.standardized_ = standardized;
}

MultiBlockDataset DatasetBuilder::build() {
    if (built_) throw InvalidArgument("DatasetBuilder::build called twice");
    built_ = true;
    double tmin = std::numeric_limits<double>::infinity();
    double tmax = -tmin;
    for (const auto& s : d_.series_)
        for (double t : s.times) {
            tmin = std::min(tmin, t);
            tmax = std::max(tmax, t);
        }
    if (tmin <= tmax && !d_.standardized_) d_.time_range_ = {tmin, tmax};
    return std::move(d_);
}

namespace {

double parse_double_field(const std::string& field, std::size_t line_no, const char* what) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(field, &pos);
        if (pos != field.size()) throw std::invalid_argument(field);
        return v;
    } catch (const std::exception&) {
        throw ConfigParse("line " + std::to_string(line_no) + ": bad " + what + " '" + field +
                          "'");
    }
}

}  // namespace

std::vector<ObservationRecord> read_records_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileNotFound(path);
    std::vector<ObservationRecord> rows;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (!header_seen) {
            header_seen = true;
            if (fields.size() >= 4 && fields[0] == "subject_id" && fields[1] == "block_id" &&
                fields[2] == "time" && fields[3] == "value")
                continue;
            throw ConfigParse(path + ": expected header subject_id,block_id,time,value");
        }
        if (fields.size() != 4)
            throw ConfigParse(path + " line " + std::to_string(line_no) + ": expected 4 fields");
        ObservationRecord r;
        r.subject_id = fields[0];
        r.block_id = fields[1];
        r.time = parse_double_field(fields[2], line_no, "time");
        r.value = parse_double_field(fields[3], line_no, "value");
        rows.push_back(std::move(r));
    }
    return rows;
}

void write_records_csv(const std::string& path, const MultiBlockDataset& dataset) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "subject_id,block_id,time,value\n";
    out.precision(17);
    for (const auto& r : dataset.to_records())
        out << r.subject_id << ',' << r.block_id << ',' << r.time << ',' << r.value << '\n';
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace msfpca
