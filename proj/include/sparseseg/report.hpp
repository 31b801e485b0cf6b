#pragma once

// Per-case evaluation, summaries and paired comparisons.

#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "metrics.hpp"
#include "stats.hpp"

namespace sparseseg {

inline constexpr const char* kMetricNames[] = {"b_iou", "dsc", "assd_mm", "ravd"};

struct CaseMetrics {
    std::string case_id;
    double b_iou = 0.0;
    double dsc = 0.0;
    std::optional<double> assd_mm;  // missing when either mask is empty
    std::optional<double> ravd;     // missing when the ground truth is empty
    std::vector<std::string> flags;

    std::optional<double> get(const std::string& metric) const {
        if (metric == "b_iou") return b_iou;
        if (metric == "dsc") return dsc;
        if (metric == "assd_mm") return assd_mm;
        if (metric == "ravd") return ravd;
        throw std::invalid_argument("unknown metric: " + metric);
    }
};

struct MetricSummary {
    double mean = std::numeric_limits<double>::quiet_NaN();
    double sd = std::numeric_limits<double>::quiet_NaN();
    int count = 0;
};

struct Comparison {
    std::string method_a;
    std::string method_b;
    std::string metric;
    double t = 0.0;
    double p_value = 0.0;
    int n = 0;
    bool valid = false;
};

struct MetricsReport {
    std::string method;
    std::vector<CaseMetrics> per_case;
    std::map<std::string, MetricSummary> summary;
    std::vector<Comparison> comparisons;

    void summarize() {
        summary.clear();
        for (const char* name : kMetricNames) {
            std::vector<double> vals;
            for (const auto& c : per_case)
                if (auto v = c.get(name)) vals.push_back(*v);
            MetricSummary s;
            s.count = static_cast<int>(vals.size());
            if (!vals.empty()) {
                s.mean = mean(vals);
                s.sd = sample_sd(vals);
            }
            summary[name] = s;
        }
    }
};

inline CaseMetrics evaluate_case(const std::string& case_id, const DenseLabelVolume& pred, const DenseLabelVolume& gt,
                                 const Spacing& spacing_mm, std::optional<int> band_px = std::nullopt) {
    CaseMetrics m;
    m.case_id = case_id;
    m.b_iou = b_iou(pred, gt, band_px.value_or(default_band_px(gt.shape)));
    m.dsc = dsc(pred, gt);
    try {
        m.assd_mm = assd(pred, gt, spacing_mm);
    } catch (const MetricError&) {
        m.flags.push_back("assd_undefined_empty_mask");
    }
    try {
        m.ravd = ravd(pred, gt);
    } catch (const MetricError&) {
        m.flags.push_back("ravd_undefined_empty_gt");
    }
    if (pred.foreground() == 0 && gt.foreground() == 0) m.flags.push_back("both_empty");
    return m;
}

/// Pairs cases by id; cases missing a value in either report are skipped.
inline Comparison compare_reports(const MetricsReport& a, const MetricsReport& b, const std::string& metric) {
    std::map<std::string, double> bv;
    for (const auto& c : b.per_case)
        if (auto v = c.get(metric)) bv[c.case_id] = *v;
    std::vector<double> xa, xb;
    for (const auto& c : a.per_case) {
        auto v = c.get(metric);
        auto it = bv.find(c.case_id);
        if (v && it != bv.end()) {
            xa.push_back(*v);
            xb.push_back(it->second);
        }
    }
    Comparison out{a.method, b.method, metric, std::numeric_limits<double>::quiet_NaN(),
                   std::numeric_limits<double>::quiet_NaN(), static_cast<int>(xa.size()), false};
    if (xa.size() < 2) return out;
    const auto r = paired_t_test(xa, xb);
    out.t = r.t;
    out.p_value = r.p;
    out.valid = r.valid;
    return out;
}

namespace detail {

inline nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }
inline nlohmann::json number_or_null(const std::optional<double>& v) {
    return v ? number_or_null(*v) : nlohmann::json();
}
inline double number_or_nan(const nlohmann::json& j) {
    return j.is_number() ? j.get<double>() : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace detail

inline nlohmann::json to_json(const MetricsReport& r) {
    nlohmann::json j;
    j["method"] = r.method;
    j["per_case"] = nlohmann::json::array();
    for (const auto& c : r.per_case) {
        j["per_case"].push_back({{"case_id", c.case_id},
                                 {"b_iou", c.b_iou},
                                 {"dsc", c.dsc},
                                 {"assd_mm", detail::number_or_null(c.assd_mm)},
                                 {"ravd", detail::number_or_null(c.ravd)},
                                 {"flags", c.flags}});
    }
    j["summary"] = nlohmann::json::object();
    for (const auto& [k, s] : r.summary)
        j["summary"][k] = {{"mean", detail::number_or_null(s.mean)}, {"sd", detail::number_or_null(s.sd)},
                           {"count", s.count}};
    j["comparisons"] = nlohmann::json::array();
    for (const auto& c : r.comparisons)
        j["comparisons"].push_back({{"method_a", c.method_a},
                                    {"method_b", c.method_b},
                                    {"metric", c.metric},
                                    {"t", detail::number_or_null(c.t)},
                                    {"p_value", detail::number_or_null(c.p_value)},
                                    {"n", c.n},
                                    {"valid", c.valid}});
    return j;
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.method = j.value("method", std::string{});
    for (const auto& c : j.at("per_case")) {
        CaseMetrics m;
        m.case_id = c.at("case_id").get<std::string>();
        m.b_iou = c.at("b_iou").get<double>();
        m.dsc = c.at("dsc").get<double>();
        if (c.contains("assd_mm") && c["assd_mm"].is_number()) m.assd_mm = c["assd_mm"].get<double>();
        if (c.contains("ravd") && c["ravd"].is_number()) m.ravd = c["ravd"].get<double>();
        m.flags = c.value("flags", std::vector<std::string>{});
        r.per_case.push_back(std::move(m));
    }
    r.summarize();
    if (j.contains("comparisons"))
        for (const auto& c : j["comparisons"])
            r.comparisons.push_back({c.value("method_a", std::string{}), c.value("method_b", std::string{}),
                                     c.value("metric", std::string{}), detail::number_or_nan(c["t"]),
                                     detail::number_or_nan(c["p_value"]), c.value("n", 0), c.value("valid", false)});
    return r;
}

/// One row per case; empty field for undefined values.
inline std::string per_case_csv(const MetricsReport& r) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "case_id,b_iou,dsc,assd_mm,ravd,flags\n";
    for (const auto& c : r.per_case) {
        os << c.case_id << ',' << c.b_iou << ',' << c.dsc << ',';
        if (c.assd_mm) os << *c.assd_mm;
        os << ',';
        if (c.ravd) os << *c.ravd;
        os << ',';
        for (std::size_t i = 0; i < c.flags.size(); ++i) os << (i ? ";" : "") << c.flags[i];
        os << '\n';
    }
    return os.str();
}

}  // namespace sparseseg
