#include "lesionbench/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

namespace lesionbench {

ConfusionCounts confusion(const NdArray<uint8_t>& pred_mask, const NdArray<uint8_t>& true_mask) {
    if (pred_mask.shape != true_mask.shape)
        throw std::runtime_error("confusion: mask shapes differ, " + shape_str(pred_mask.shape) + " vs " +
                                 shape_str(true_mask.shape));
    ConfusionCounts c;
    for (int64_t i = 0; i < pred_mask.size(); ++i) {
        bool p = pred_mask[i] != 0;
        bool g = true_mask[i] != 0;
        if (p && g) ++c.tp;
        else if (p) ++c.fp;
        else if (g) ++c.fn;
        else ++c.tn;
    }
    return c;
}

std::optional<double> hard_dice(const ConfusionCounts& c) {
    int64_t denom = 2 * c.tp + c.fp + c.fn;
    if (denom == 0) return 1.0;  // empty prediction vs empty truth
    return 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

std::optional<double> precision(const ConfusionCounts& c) {
    int64_t denom = c.tp + c.fp;
    if (denom == 0) return std::nullopt;
    return static_cast<double>(c.tp) / static_cast<double>(denom);
}

std::optional<double> sensitivity(const ConfusionCounts& c) {
    int64_t denom = c.tp + c.fn;
    if (denom == 0) return std::nullopt;
    return static_cast<double>(c.tp) / static_cast<double>(denom);
}

BratsMasks merge_brats_classes(const LabelVolume& label) {
    BratsMasks out;
    out.whole = NdArray<uint8_t>(label.data.shape);
    out.core = NdArray<uint8_t>(label.data.shape);
    out.enhancing = NdArray<uint8_t>(label.data.shape);
    for (int64_t i = 0; i < label.data.size(); ++i) {
        int32_t v = label.data[i];
        if (v < 0 || v > 4)
            throw std::runtime_error("merge_brats_classes: label value " + std::to_string(v) + " outside {0..4}");
        out.whole[i] = (v >= 1) ? 1 : 0;
        out.core[i] = (v == 1 || v == 3 || v == 4) ? 1 : 0;
        out.enhancing[i] = (v == 4) ? 1 : 0;
    }
    return out;
}

namespace {

struct Accum {
    double sum = 0.0;
    int64_t n = 0;
    void add(const std::optional<double>& v) {
        if (v) {
            sum += *v;
            ++n;
        }
    }
    std::optional<double> mean() const {
        if (n == 0) return std::nullopt;
        return sum / static_cast<double>(n);
    }
};

MetricMean mean_of(const std::vector<const CaseMetrics*>& rows) {
    Accum d, p, s;
    for (const auto* r : rows) {
        d.add(r->dice);
        p.add(r->precision);
        s.add(r->sensitivity);
    }
    MetricMean m;
    m.dice = d.mean();
    m.precision = p.mean();
    m.sensitivity = s.mean();
    m.case_count = static_cast<int64_t>(rows.size());
    return m;
}

std::string fmt(const std::optional<double>& v, const char* null_text) {
    if (!v) return null_text;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", *v);
    return buf;
}

}  // namespace

EvalReport aggregate(const std::vector<CaseMetrics>& per_case) {
    if (per_case.empty()) throw std::runtime_error("aggregate: no case rows");

    EvalReport rep;
    rep.per_case = per_case;

    std::map<Diagnosis, std::vector<const CaseMetrics*>> groups;
    std::vector<const CaseMetrics*> all;
    for (const auto& r : rep.per_case) {
        groups[r.diagnosis].push_back(&r);
        all.push_back(&r);
    }
    // canonical clinical report row order, extra tags appended
    for (Diagnosis d : {Diagnosis::metastasis, Diagnosis::meningioma, Diagnosis::schwannoma,
                        Diagnosis::pituitary, Diagnosis::avm, Diagnosis::tn, Diagnosis::other,
                        Diagnosis::synthetic}) {
        auto it = groups.find(d);
        if (it != groups.end()) rep.per_diagnosis.emplace_back(d, mean_of(it->second));
    }
    rep.overall = mean_of(all);  // case-weighted: every case counts once
    return rep;
}

std::string report_to_markdown(const EvalReport& report) {
    std::ostringstream os;
    os << "# Evaluation report\n\n";
    os << "model: " << report.model_name << "  \n";
    os << "num parameters: " << report.num_parameters << "  \n";
    os << "batch sampler: " << report.sampler_key << "  \n";
    os << "loss function: " << report.loss_key << "  \n";
    os << "checkpoint: " << report.checkpoint_id << "\n\n";

    os << "| Diagnosis | DICE | SENSITIVITY | PRECISION | cases |\n";
    os << "|---|---|---|---|---|\n";
    for (const auto& [diag, m] : report.per_diagnosis) {
        os << "| " << display_name(diag) << " | " << fmt(m.dice, "n/a") << " | " << fmt(m.sensitivity, "n/a")
           << " | " << fmt(m.precision, "n/a") << " | " << m.case_count << " |\n";
    }
    os << "| Total | " << fmt(report.overall.dice, "n/a") << " | " << fmt(report.overall.sensitivity, "n/a")
       << " | " << fmt(report.overall.precision, "n/a") << " | " << report.overall.case_count << " |\n";
    return os.str();
}

std::string report_to_csv(const EvalReport& report) {
    std::ostringstream os;
    os << "case_id,diagnosis,dice,precision,sensitivity\n";
    for (const auto& r : report.per_case) {
        os << r.case_id << ',' << to_string(r.diagnosis) << ',' << fmt(r.dice, "") << ',' << fmt(r.precision, "")
           << ',' << fmt(r.sensitivity, "") << "\n";
    }
    return os.str();
}

std::string report_summary_row_csv(const EvalReport& report, bool with_header) {
    std::ostringstream os;
    if (with_header)
        os << "model,num parameters,batch sampler,loss function,val precision,val sensitivity,val hard-dice\n";
    os << report.model_name << ',' << report.num_parameters << ',' << report.sampler_key << ',' << report.loss_key
       << ',' << fmt(report.overall.precision, "") << ',' << fmt(report.overall.sensitivity, "") << ','
       << fmt(report.overall.dice, "") << "\n";
    return os.str();
}

}  // namespace lesionbench
