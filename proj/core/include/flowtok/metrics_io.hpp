#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "flowtok/datamodel.hpp"

namespace flowtok {

// Appends one JSON object per line with keys exactly step, name, value, tags.
class MetricsWriter {
public:
    explicit MetricsWriter(const std::string& path, bool append = true);
    void write(const MetricRecord& r);

private:
    std::ofstream out_;
    std::string path_;
};

std::string metric_to_json(const MetricRecord& r);
MetricRecord metric_from_json(const std::string& line);
std::vector<MetricRecord> read_metrics(const std::string& path);

}  // namespace flowtok
