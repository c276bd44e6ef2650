#pragma once

#include "glyphflow/flowmatch.hpp"
#include "glyphflow/glyphworld.hpp"
#include "glyphflow/params.hpp"

#include <string>
#include <vector>

namespace glyphflow::evalkit {

int levenshtein(const std::string& a, const std::string& b);

/// Normalized edit-distance similarity: 1 - lev/max(len), higher is better.
/// Two empty strings score 1.
double ned(const std::string& pred, const std::string& ref);

/// Fraction of whitespace-delimited reference words matched at the same
/// position of the prediction's word sequence; missing positions are wrong.
/// Empty reference: 1 when the prediction is empty too, else 0.
double word_accuracy(const std::string& pred, const std::string& ref);

struct EvalRecord {
    std::string prompt_text;
    std::string decoded;
    int length_bucket = 1; // text length clamped to {1,2,3,4}
    double word_accuracy = 0.0;
    double ned = 0.0;
};

struct BucketAggregate {
    int bucket = 0;
    int count = 0;
    double word_accuracy = 0.0;
    double ned = 0.0;
};

struct EvalReport {
    std::vector<EvalRecord> records;
    double overall_word_accuracy = 0.0;
    double overall_ned = 0.0;
    std::vector<BucketAggregate> buckets;
};

EvalReport make_report(std::vector<EvalRecord> records);

struct BenchmarkConfig {
    flow::SamplerSchedule schedule;
    double guidance_scale = 1.0;
    std::uint64_t seed = 0;
    int threads = 0;
};

/// Per prompt: sample_ode -> ocr_decode -> both metrics. Deterministic in
/// (params, promptset, seed).
EvalReport run_benchmark(const core::ParamSet& params, const model::ModelConfig& cfg,
                         const glyph::Dataset& promptset, const BenchmarkConfig& bench);

void save_report_json(const EvalReport& report, const std::string& path);
void save_report_csv(const EvalReport& report, const std::string& path);

} // namespace glyphflow::evalkit
