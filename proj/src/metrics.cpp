#include "ar/metrics.hpp"

#include <algorithm>

namespace ar {

double EditStats::wer() const {
    if (ref_length <= 0) throw NumericError("WER undefined for empty reference");
    return static_cast<double>(errors()) / ref_length;
}

EditStats edit_distance(const LabelSequence& ref, const LabelSequence& hyp) {
    int n = ref.length(), m = hyp.length();
    // cost DP plus a move table for the deterministic backtrace
    std::vector<int> cost(static_cast<std::size_t>((n + 1) * (m + 1)));
    std::vector<char> move(cost.size());  // 'm' match, 's' sub, 'd' del(ref), 'i' ins(hyp)
    auto at = [m](int i, int j) { return static_cast<std::size_t>(i * (m + 1) + j); };
    for (int i = 0; i <= n; ++i) {
        cost[at(i, 0)] = i;
        move[at(i, 0)] = 'd';
    }
    for (int j = 0; j <= m; ++j) {
        cost[at(0, j)] = j;
        move[at(0, j)] = 'i';
    }
    for (int i = 1; i <= n; ++i) {
        for (int j = 1; j <= m; ++j) {
            bool eq = ref.ids[static_cast<std::size_t>(i - 1)] ==
                      hyp.ids[static_cast<std::size_t>(j - 1)];
            int diag = cost[at(i - 1, j - 1)] + (eq ? 0 : 1);
            int del = cost[at(i - 1, j)] + 1;
            int ins = cost[at(i, j - 1)] + 1;
            // diagonal wins ties: substitutions preferred over insert+delete
            int best = diag;
            char mv = eq ? 'm' : 's';
            if (del < best) {
                best = del;
                mv = 'd';
            }
            if (ins < best) {
                best = ins;
                mv = 'i';
            }
            cost[at(i, j)] = best;
            move[at(i, j)] = mv;
        }
    }
    EditStats stats;
    stats.ref_length = n;
    int i = n, j = m;
    while (i > 0 || j > 0) {
        switch (move[at(i, j)]) {
            case 'm': --i; --j; break;
            case 's': ++stats.substitutions; --i; --j; break;
            case 'd': ++stats.deletions; --i; break;
            case 'i': ++stats.insertions; --j; break;
        }
    }
    return stats;
}

double corpus_wer(const std::vector<std::pair<LabelSequence, LabelSequence>>& pairs) {
    if (pairs.empty()) throw NumericError("corpus_wer: empty corpus");
    long errors = 0, ref_len = 0;
    for (const auto& [ref, hyp] : pairs) {
        EditStats s = edit_distance(ref, hyp);
        errors += s.errors();
        ref_len += s.ref_length;
    }
    if (ref_len == 0) throw NumericError("corpus_wer: zero total reference length");
    return static_cast<double>(errors) / ref_len;
}

LatencyReport make_latency_report(double wall_seconds, double audio_seconds,
                                  std::vector<double> per_iteration_seconds) {
    if (audio_seconds <= 0.0) throw NumericError("latency report requires audio_seconds > 0");
    LatencyReport r;
    r.wall_seconds = wall_seconds;
    r.audio_seconds = audio_seconds;
    r.rtf = wall_seconds / audio_seconds;
    r.per_iteration_seconds = std::move(per_iteration_seconds);
    return r;
}

}  // namespace ar
