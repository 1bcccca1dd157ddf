#include "flowtok/metrics_io.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "flowtok/errors.hpp"

namespace flowtok {

using nlohmann::json;

MetricsWriter::MetricsWriter(const std::string& path, bool append) : path_(path) {
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_) throw IoError("cannot open metrics file for writing: " + path);
}

void MetricsWriter::write(const MetricRecord& r) {
    out_ << metric_to_json(r) << "\n";
    out_.flush();
    if (!out_) throw IoError("failed writing metrics to " + path_);
}

std::string metric_to_json(const MetricRecord& r) {
    if (!std::isfinite(r.value))
        throw DomainError("metric '" + r.name + "' has non-finite value");
    json j;
    j["step"] = r.step;
    j["name"] = r.name;
    j["value"] = r.value;
    j["tags"] = r.tags;
    return j.dump();
}

MetricRecord metric_from_json(const std::string& line) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw IoError("malformed metric record: " + line);
    MetricRecord r;
    try {
        r.step = j.at("step").get<int64_t>();
        r.name = j.at("name").get<std::string>();
        r.value = j.at("value").get<double>();
        r.tags = j.at("tags").get<std::map<std::string, std::string>>();
    } catch (const json::exception& e) {
        throw IoError(std::string("malformed metric record: ") + e.what());
    }
    return r;
}

std::vector<MetricRecord> read_metrics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open metrics file: " + path);
    std::vector<MetricRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(metric_from_json(line));
    }
    return out;
}

}  // namespace flowtok
