#include "ar/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ar {

namespace {

constexpr double kLogZero = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
    if (a == kLogZero) return b;
    if (b == kLogZero) return a;
    return (a > b) ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

}  // namespace

std::string Vocabulary::symbol(int ext_id) const {
    if (!valid_extended(ext_id)) throw ShapeError("symbol: id out of range");
    if (ext_id == blank_id()) return "_";
    return labels[static_cast<std::size_t>(ext_id - 1)];
}

Vocabulary Vocabulary::letters(int n) {
    if (n < 1 || n > 26) throw ShapeError("letters: vocab size must be in [1,26]");
    Vocabulary v;
    for (int i = 0; i < n; ++i) v.labels.push_back(std::string(1, static_cast<char>('a' + i)));
    return v;
}

LabelSequence collapse(const Alignment& a, const Vocabulary& v) {
    LabelSequence y;
    int prev = -1;
    for (int id : a.ids) {
        if (!v.valid_extended(id)) {
            throw ShapeError("collapse: alignment id " + std::to_string(id) +
                             " out of range for extended alphabet of size " +
                             std::to_string(v.extended_size()));
        }
        if (id != prev && id != v.blank_id()) y.ids.push_back(id);
        prev = id;
    }
    return y;
}

int min_alignment_frames(const LabelSequence& y) {
    int frames = y.length();
    for (int i = 1; i < y.length(); ++i)
        if (y.ids[i] == y.ids[i - 1]) ++frames;
    return frames;
}

std::vector<Alignment> enumerate_alignments(const LabelSequence& y, int t_frames,
                                            const Vocabulary& v) {
    if (t_frames < 0) throw ShapeError("enumerate_alignments: negative frame count");
    if (t_frames > 12) {
        throw ShapeError("enumerate_alignments: t_frames " + std::to_string(t_frames) +
                         " exceeds budget of 12");
    }
    double total = std::pow(static_cast<double>(v.extended_size()), t_frames);
    if (total > 1e7) {
        throw ShapeError("enumerate_alignments: search space " + std::to_string(total) +
                         " exceeds budget of 1e7");
    }
    std::vector<Alignment> result;
    if (t_frames < min_alignment_frames(y)) return result;
    Alignment a;
    a.ids.assign(static_cast<std::size_t>(t_frames), 0);
    std::uint64_t count = static_cast<std::uint64_t>(total);
    int base = v.extended_size();
    for (std::uint64_t code = 0; code < count; ++code) {
        std::uint64_t c = code;
        for (int t = 0; t < t_frames; ++t) {
            a.ids[static_cast<std::size_t>(t)] = static_cast<int>(c % base);
            c /= base;
        }
        if (collapse(a, v) == y) result.push_back(a);
    }
    return result;
}

void validate_log_prob_matrix(const Tensor& log_probs, const Vocabulary& v) {
    if (log_probs.ndim() != 2 || log_probs.dim(1) != v.extended_size()) {
        throw ShapeError("log-prob matrix must be [T," + std::to_string(v.extended_size()) +
                         "], got " + shape_str(log_probs.shape()));
    }
    int t = log_probs.dim(0), n = log_probs.dim(1);
    for (int i = 0; i < t; ++i) {
        double lse = kLogZero;
        for (int j = 0; j < n; ++j) lse = log_add(lse, log_probs.at(i * n + j));
        if (std::abs(lse) > 1e-6) {
            throw NumericError("log-prob row " + std::to_string(i) +
                               " not normalized (logsumexp = " + std::to_string(lse) + ")");
        }
    }
}

namespace {

// State lattice: s even -> blank, s odd -> y[(s-1)/2].
int state_label(int s, const LabelSequence& y) {
    return (s % 2 == 0) ? 0 : y.ids[static_cast<std::size_t>((s - 1) / 2)];
}

}  // namespace

Tensor ctc_log_likelihood(const Tensor& log_probs, const LabelSequence& y,
                          const Vocabulary& v) {
    validate_log_prob_matrix(log_probs, v);
    for (int id : y.ids) {
        if (id == v.blank_id() || !v.valid_extended(id)) {
            throw ShapeError("ctc_log_likelihood: target contains blank or invalid id");
        }
    }
    int t_frames = log_probs.dim(0);
    int n = log_probs.dim(1);
    if (t_frames < min_alignment_frames(y)) {
        return Tensor::scalar(kLogZero);  // unreachable target, reported, not a crash
    }
    int num_states = 2 * y.length() + 1;
    auto lp = [&](int t, int c) { return log_probs.at(t * n + c); };

    std::vector<double> alpha(static_cast<std::size_t>(t_frames) * num_states, kLogZero);
    alpha[0] = lp(0, 0);
    if (num_states > 1) alpha[1] = lp(0, state_label(1, y));
    for (int t = 1; t < t_frames; ++t) {
        for (int s = 0; s < num_states; ++s) {
            double best = alpha[(t - 1) * num_states + s];
            if (s >= 1) best = log_add(best, alpha[(t - 1) * num_states + s - 1]);
            int lab = state_label(s, y);
            if (s >= 2 && lab != 0 && lab != state_label(s - 2, y)) {
                best = log_add(best, alpha[(t - 1) * num_states + s - 2]);
            }
            if (best != kLogZero) best += lp(t, lab);
            alpha[t * num_states + s] = best;
        }
    }
    double log_z = alpha[(t_frames - 1) * num_states + num_states - 1];
    if (num_states > 1) {
        log_z = log_add(log_z, alpha[(t_frames - 1) * num_states + num_states - 2]);
    }
    if (log_z == kLogZero) return Tensor::scalar(kLogZero);

    bool rec = active_tape() != nullptr && log_probs.requires_grad();
    Tensor out({1}, {log_z}, rec);
    if (rec) {
        out.node()->leaf = false;
        active_tape()->record(
            [pn = log_probs.node(), on = out.node(), y, t_frames, n, num_states,
             alpha = std::move(alpha), log_z] {
                double g = on->grad_buf()[0];
                if (g == 0.0) return;
                std::vector<double> beta(static_cast<std::size_t>(t_frames) * num_states,
                                         kLogZero);
                beta[(t_frames - 1) * num_states + num_states - 1] = 0.0;
                if (num_states > 1) beta[(t_frames - 1) * num_states + num_states - 2] = 0.0;
                for (int t = t_frames - 2; t >= 0; --t) {
                    for (int s = 0; s < num_states; ++s) {
                        double acc = kLogZero;
                        for (int sn = s; sn <= s + 2 && sn < num_states; ++sn) {
                            int lab = state_label(sn, y);
                            if (sn == s + 2 && (lab == 0 || lab == state_label(s, y))) continue;
                            double b = beta[(t + 1) * num_states + sn];
                            if (b == kLogZero) continue;
                            acc = log_add(acc, b + pn->value[(t + 1) * n + lab]);
                        }
                        beta[t * num_states + s] = acc;
                    }
                }
                auto& gp = pn->grad_buf();
                for (int t = 0; t < t_frames; ++t) {
                    for (int s = 0; s < num_states; ++s) {
                        double ab = alpha[t * num_states + s] + beta[t * num_states + s];
                        if (ab == kLogZero) continue;
                        gp[t * n + state_label(s, y)] += g * std::exp(ab - log_z);
                    }
                }
            },
            out.node());
    }
    return out;
}

bool is_neg_inf(const Tensor& t) {
    return t.size() == 1 && t.at(0) == kLogZero;
}

Alignment greedy_alignment(const Tensor& log_probs) {
    if (log_probs.ndim() != 2) {
        throw ShapeError("greedy_alignment: expected 2-D matrix, got " +
                         shape_str(log_probs.shape()));
    }
    int t = log_probs.dim(0), n = log_probs.dim(1);
    Alignment a;
    a.ids.reserve(static_cast<std::size_t>(t));
    for (int i = 0; i < t; ++i) {
        const double* row = log_probs.data().data() + static_cast<std::size_t>(i) * n;
        // first maximum -> lowest id on ties
        a.ids.push_back(static_cast<int>(std::max_element(row, row + n) - row));
    }
    return a;
}

std::vector<double> token_confidences(const Tensor& log_probs, const Alignment& a,
                                      const Vocabulary& v, ConfidenceMode mode) {
    if (a.length() != log_probs.dim(0)) {
        throw ShapeError("token_confidences: alignment length " + std::to_string(a.length()) +
                         " != frame count " + std::to_string(log_probs.dim(0)));
    }
    int n = log_probs.dim(1);
    std::vector<double> out;
    int t = 0;
    while (t < a.length()) {
        int id = a.ids[static_cast<std::size_t>(t)];
        int run_end = t + 1;
        while (run_end < a.length() && a.ids[static_cast<std::size_t>(run_end)] == id) ++run_end;
        if (id != v.blank_id()) {
            double agg = (mode == ConfidenceMode::Min) ? 1.0 : 0.0;
            for (int u = t; u < run_end; ++u) {
                double p = std::exp(log_probs.at(u * n + id));
                switch (mode) {
                    case ConfidenceMode::Max: agg = std::max(agg, p); break;
                    case ConfidenceMode::Min: agg = std::min(agg, p); break;
                    case ConfidenceMode::Mean: agg += p; break;
                }
            }
            if (mode == ConfidenceMode::Mean) agg /= (run_end - t);
            out.push_back(agg);
        }
        t = run_end;
    }
    return out;
}

Alignment canonical_alignment(const LabelSequence& y, int t_frames, const Vocabulary& v) {
    int need = min_alignment_frames(y);
    if (t_frames < need) {
        throw ShapeError("canonical_alignment: " + std::to_string(t_frames) +
                         " frames cannot hold a target needing " + std::to_string(need));
    }
    // Base string: labels with separating blanks at repeats; stretch segments
    // near-evenly over t_frames (stretching never changes the collapse).
    std::vector<int> base;
    for (int i = 0; i < y.length(); ++i) {
        if (i > 0 && y.ids[i] == y.ids[i - 1]) base.push_back(v.blank_id());
        base.push_back(y.ids[static_cast<std::size_t>(i)]);
    }
    if (base.empty()) base.push_back(v.blank_id());
    Alignment a;
    int b = static_cast<int>(base.size());
    for (int i = 0; i < b; ++i) {
        int start = i * t_frames / b;
        int end = (i + 1) * t_frames / b;
        for (int t = start; t < end; ++t) a.ids.push_back(base[static_cast<std::size_t>(i)]);
    }
    return a;
}

}  // namespace ar
