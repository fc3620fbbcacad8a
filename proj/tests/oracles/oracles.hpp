#pragma once

// Deliberately naive re-implementations used as test oracles. They share no
// code with the library beyond plain data types.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

// Loss summed over anchors, straight from the definition: every term is
// evaluated with exp/log in double and no stabilising shift.
inline double supcon(const std::vector<std::vector<double>>& z, const std::vector<std::string>& labels, double tau) {
    const std::size_t n = z.size();
    auto dot = [&](std::size_t a, std::size_t b) {
        double s = 0.0;
        for (std::size_t k = 0; k < z[a].size(); ++k) s += z[a][k] * z[b][k];
        return s;
    };
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double denom = 0.0;
        for (std::size_t a = 0; a < n; ++a)
            if (a != i) denom += std::exp(dot(i, a) / tau);
        double sum = 0.0;
        int positives = 0;
        for (std::size_t p = 0; p < n; ++p) {
            if (p == i || labels[p] != labels[i]) continue;
            sum += std::log(std::exp(dot(i, p) / tau) / denom);
            ++positives;
        }
        total += -sum / positives;
    }
    return total;
}

// Precision at every relevant rank, averaged over min(total, K).
inline double average_precision(const std::vector<std::string>& ranking, const std::set<std::string>& positives, int k,
                                std::size_t total) {
    const double n = static_cast<double>(std::min<std::size_t>(total, static_cast<std::size_t>(k)));
    double sum = 0.0;
    for (int r = 1; r <= k && r <= static_cast<int>(ranking.size()); ++r) {
        if (!positives.count(ranking[r - 1])) continue;
        int hits = 0;
        for (int j = 1; j <= r; ++j) hits += positives.count(ranking[j - 1]) ? 1 : 0;
        sum += static_cast<double>(hits) / r;
    }
    return sum / n;
}

inline int hit(const std::vector<std::string>& ranking, const std::set<std::string>& positives, int k) {
    for (int r = 0; r < k && r < static_cast<int>(ranking.size()); ++r)
        if (positives.count(ranking[r])) return 1;
    return 0;
}

struct Entry {
    std::string instance_id;
    std::string model_id;
    std::vector<float> features;  // [C][cells]
};

// Cosine between the query and the entry restricted to the listed cells;
// 0 when the restricted entry is all zeros.
inline double masked_cosine(const Entry& e, const std::vector<double>& query, int channels, int cells,
                            const std::vector<int>& mask_cells) {
    double norm2 = 0.0;
    double dot = 0.0;
    for (int c = 0; c < channels; ++c)
        for (int cell : mask_cells) {
            const double v = e.features[static_cast<std::size_t>(c) * cells + cell];
            norm2 += v * v;
            dot += v * query[static_cast<std::size_t>(c) * cells + cell];
        }
    if (norm2 == 0.0) return 0.0;
    return dot / std::sqrt(norm2);
}

struct Ranked {
    std::string model_id;
    std::string best_instance_id;
    double score;
};

// Model-level ranking: best instance per model (ties to the smaller
// instance id), then score descending with model id breaking ties.
inline std::vector<Ranked> rank(const std::vector<Entry>& entries, const std::vector<double>& query, int channels,
                                int cells, const std::vector<int>& mask_cells, int k) {
    std::map<std::string, Ranked> best;
    for (const auto& e : entries) {
        const double s = masked_cosine(e, query, channels, cells, mask_cells);
        auto it = best.find(e.model_id);
        if (it == best.end()) {
            best.emplace(e.model_id, Ranked{e.model_id, e.instance_id, s});
        } else if (s > it->second.score || (s == it->second.score && e.instance_id < it->second.best_instance_id)) {
            it->second = Ranked{e.model_id, e.instance_id, s};
        }
    }
    std::vector<Ranked> out;
    for (auto& [_, r] : best) out.push_back(r);
    for (std::size_t i = 0; i < out.size(); ++i)
        for (std::size_t j = i + 1; j < out.size(); ++j) {
            const bool swap = out[j].score > out[i].score ||
                              (out[j].score == out[i].score && out[j].model_id < out[i].model_id);
            if (swap) std::swap(out[i], out[j]);
        }
    if (out.size() > static_cast<std::size_t>(k)) out.resize(k);
    return out;
}

}  // namespace oracle
