#include "glyphflow/evalkit.hpp"

#include "glyphflow/parallel.hpp"

#include "json.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace glyphflow::evalkit {

namespace {

std::vector<std::string> split_words(const std::string& s) {
    std::vector<std::string> words;
    std::istringstream in(s);
    std::string w;
    while (in >> w) {
        words.push_back(w);
    }
    return words;
}

} // namespace

int levenshtein(const std::string& a, const std::string& b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<int> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) {
        prev[j] = static_cast<int>(j);
    }
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = static_cast<int>(i);
        for (std::size_t j = 1; j <= m; ++j) {
            const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

double ned(const std::string& pred, const std::string& ref) {
    if (pred.empty() && ref.empty()) {
        return 1.0;
    }
    const double denom = static_cast<double>(std::max(pred.size(), ref.size()));
    return 1.0 - static_cast<double>(levenshtein(pred, ref)) / denom;
}

double word_accuracy(const std::string& pred, const std::string& ref) {
    const std::vector<std::string> ref_words = split_words(ref);
    const std::vector<std::string> pred_words = split_words(pred);
    if (ref_words.empty()) {
        return pred_words.empty() ? 1.0 : 0.0;
    }
    int hits = 0;
    for (std::size_t i = 0; i < ref_words.size(); ++i) {
        if (i < pred_words.size() && pred_words[i] == ref_words[i]) {
            ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(ref_words.size());
}

EvalReport make_report(std::vector<EvalRecord> records) {
    EvalReport report;
    report.records = std::move(records);
    if (report.records.empty()) {
        return report;
    }
    std::map<int, BucketAggregate> buckets;
    for (const EvalRecord& r : report.records) {
        report.overall_word_accuracy += r.word_accuracy;
        report.overall_ned += r.ned;
        BucketAggregate& b = buckets[r.length_bucket];
        b.bucket = r.length_bucket;
        b.count += 1;
        b.word_accuracy += r.word_accuracy;
        b.ned += r.ned;
    }
    const double n = static_cast<double>(report.records.size());
    report.overall_word_accuracy /= n;
    report.overall_ned /= n;
    for (auto& [bucket, agg] : buckets) {
        agg.word_accuracy /= agg.count;
        agg.ned /= agg.count;
        report.buckets.push_back(agg);
    }
    return report;
}

EvalReport run_benchmark(const core::ParamSet& params, const model::ModelConfig& cfg,
                         const glyph::Dataset& promptset, const BenchmarkConfig& bench) {
    const int n = static_cast<int>(promptset.items.size());
    std::vector<EvalRecord> records(static_cast<std::size_t>(n));
    core::RngStream root(bench.seed, 0xE7A1ULL);

    core::parallel_for(n, bench.threads, [&](int i) {
        const glyph::DatasetItem& item = promptset.items[static_cast<std::size_t>(i)];
        glyph::TokenSeq tokens = glyph::tokenize_prompt(item.prompt, cfg.max_seq_len);
        core::Tensor pixels =
            flow::sample_ode(params, cfg, tokens, item.image.res, bench.schedule,
                             root.split(static_cast<std::uint64_t>(i)), bench.guidance_scale);
        glyph::GlyphImage image;
        image.res = item.image.res;
        image.pixels = std::move(pixels);
        const std::string decoded = glyph::ocr_decode(image).text;

        EvalRecord rec;
        rec.prompt_text = item.prompt.text;
        rec.decoded = decoded;
        rec.length_bucket = std::min<int>(4, static_cast<int>(item.prompt.text.size()));
        rec.word_accuracy = word_accuracy(decoded, item.prompt.text);
        rec.ned = ned(decoded, item.prompt.text);
        records[static_cast<std::size_t>(i)] = std::move(rec);
    });

    return make_report(std::move(records));
}

void save_report_json(const EvalReport& report, const std::string& path) {
    nlohmann::json j;
    j["overall"]["word_accuracy"] = report.overall_word_accuracy;
    j["overall"]["ned"] = report.overall_ned;
    for (const BucketAggregate& b : report.buckets) {
        nlohmann::json jb;
        jb["bucket"] = b.bucket;
        jb["count"] = b.count;
        jb["word_accuracy"] = b.word_accuracy;
        jb["ned"] = b.ned;
        j["buckets"].push_back(jb);
    }
    for (const EvalRecord& r : report.records) {
        nlohmann::json jr;
        jr["text"] = r.prompt_text;
        jr["decoded"] = r.decoded;
        jr["length_bucket"] = r.length_bucket;
        jr["word_accuracy"] = r.word_accuracy;
        jr["ned"] = r.ned;
        j["records"].push_back(jr);
    }
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("evalkit: cannot open '" + path + "' for writing");
    }
    out << j.dump(2) << "\n";
}

void save_report_csv(const EvalReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("evalkit: cannot open '" + path + "' for writing");
    }
    out << "text,length_bucket,word_accuracy,ned\n";
    for (const EvalRecord& r : report.records) {
        out << r.prompt_text << "," << r.length_bucket << "," << r.word_accuracy << "," << r.ned << "\n";
    }
}

} // namespace glyphflow::evalkit
