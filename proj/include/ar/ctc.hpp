#pragma once

#include <string>
#include <vector>

#include "ar/tensor.hpp"

namespace ar {

/// Label alphabet plus the blank. Extended ids: 0 = blank, 1..|labels| = labels.
struct Vocabulary {
    std::vector<std::string> labels;

    int blank_id() const { return 0; }
    int num_labels() const { return static_cast<int>(labels.size()); }
    int extended_size() const { return num_labels() + 1; }

    std::string symbol(int ext_id) const;
    bool valid_extended(int id) const { return id >= 0 && id < extended_size(); }
    bool operator==(const Vocabulary&) const = default;

    /// "a","b","c",... n single-letter labels.
    static Vocabulary letters(int n);
};

/// Frame-length sequence over the extended alphabet.
struct Alignment {
    std::vector<int> ids;

    bool operator==(const Alignment&) const = default;
    int length() const { return static_cast<int>(ids.size()); }
};

/// Sequence over the plain labels (extended ids, all nonzero). May be empty.
struct LabelSequence {
    std::vector<int> ids;

    bool operator==(const LabelSequence&) const = default;
    int length() const { return static_cast<int>(ids.size()); }
};

/// Merge adjacent equal labels, then drop blanks.
LabelSequence collapse(const Alignment& a, const Vocabulary& v);

/// Shortest alignment that can produce y: |y| plus one separating blank per
/// adjacent repeat.
int min_alignment_frames(const LabelSequence& y);

/// Exhaustive preimage of collapse: all length-t_frames strings over the
/// extended alphabet that collapse to y. Exponential; enforces a search budget.
std::vector<Alignment> enumerate_alignments(const LabelSequence& y, int t_frames,
                                            const Vocabulary& v);

/// Marginal log p(y | x) by the forward DP over the blank-interleaved state
/// lattice, O(T * |y|). Differentiable wrt log_probs. Returns a -inf scalar
/// (off-tape) when y is unreachable in the given frame count.
Tensor ctc_log_likelihood(const Tensor& log_probs, const LabelSequence& y,
                          const Vocabulary& v);

bool is_neg_inf(const Tensor& t);

/// Per-frame argmax; ties break toward the lowest id.
Alignment greedy_alignment(const Tensor& log_probs);

enum class ConfidenceMode { Max, Min, Mean };

/// One confidence per collapsed token, aggregated over the frames of the
/// token's run in the alignment (default: max frame probability).
std::vector<double> token_confidences(const Tensor& log_probs, const Alignment& a,
                                      const Vocabulary& v,
                                      ConfidenceMode mode = ConfidenceMode::Max);

/// A valid alignment for y in t_frames frames (teacher-forcing input); tokens
/// spread near-evenly, repeats separated by blanks.
Alignment canonical_alignment(const LabelSequence& y, int t_frames, const Vocabulary& v);

void validate_log_prob_matrix(const Tensor& log_probs, const Vocabulary& v);

}  // namespace ar
