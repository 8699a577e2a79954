#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

#include "ar/ctc.hpp"
#include "ar/ops.hpp"

using namespace ar;

namespace {

Tensor random_log_probs(int t, const Vocabulary& v, std::mt19937_64& rng) {
    Tensor logits = Tensor::zeros({t, v.extended_size()});
    std::normal_distribution<double> d(0.0, 1.5);
    for (auto& x : logits.mutable_data()) x = d(rng);
    return log_softmax_rows(logits);
}

Alignment align_from_symbols(const std::string& s) {
    // '_' blank, 'a'.. labels
    Alignment a;
    for (char c : s) a.ids.push_back(c == '_' ? 0 : c - 'a' + 1);
    return a;
}

LabelSequence labels_from_symbols(const std::string& s) {
    LabelSequence y;
    for (char c : s) y.ids.push_back(c - 'a' + 1);
    return y;
}

// independent oracle: log sum over enumerated alignments of per-frame log-prob sums
double oracle_log_likelihood(const Tensor& logp, const LabelSequence& y, const Vocabulary& v) {
    auto aligns = enumerate_alignments(y, logp.dim(0), v);
    if (aligns.empty()) return -std::numeric_limits<double>::infinity();
    int n = logp.dim(1);
    double acc = -std::numeric_limits<double>::infinity();
    for (const auto& a : aligns) {
        double s = 0.0;
        for (int t = 0; t < a.length(); ++t) s += logp.at(t * n + a.ids[t]);
        if (acc == -std::numeric_limits<double>::infinity())
            acc = s;
        else
            acc = std::max(acc, s) + std::log1p(std::exp(-std::abs(acc - s)));
    }
    return acc;
}

}  // namespace

TEST_CASE("collapse matches AB__BB_A -> ABBA") {
    Vocabulary v = Vocabulary::letters(2);
    LabelSequence y = collapse(align_from_symbols("ab__bb_a"), v);
    CHECK(y == labels_from_symbols("abba"));
}

TEST_CASE("collapse of all blanks is empty") {
    Vocabulary v = Vocabulary::letters(2);
    CHECK(collapse(align_from_symbols("____"), v).ids.empty());
}

TEST_CASE("blank breaks a repeat") {
    Vocabulary v = Vocabulary::letters(1);
    CHECK(collapse(align_from_symbols("a_a"), v) == labels_from_symbols("aa"));
    CHECK(collapse(align_from_symbols("aa"), v) == labels_from_symbols("a"));
}

TEST_CASE("collapse rejects out-of-range ids") {
    Vocabulary v = Vocabulary::letters(2);
    Alignment a;
    a.ids = {0, 5};
    CHECK_THROWS_AS(collapse(a, v), ShapeError);
}

TEST_CASE("enumerate_alignments: y=a, t=2 over {a,b}") {
    Vocabulary v = Vocabulary::letters(2);
    auto r = enumerate_alignments(labels_from_symbols("a"), 2, v);
    REQUIRE(r.size() == 3);  // a_, _a, aa
    for (const auto& a : r) CHECK(collapse(a, v) == labels_from_symbols("a"));
}

TEST_CASE("enumerate_alignments: y=ab, t=3 has 5 members") {
    Vocabulary v = Vocabulary::letters(2);
    auto r = enumerate_alignments(labels_from_symbols("ab"), 3, v);
    CHECK(r.size() == 5);
}

TEST_CASE("enumerate_alignments: repeat needs a separating blank") {
    Vocabulary v = Vocabulary::letters(2);
    CHECK(enumerate_alignments(labels_from_symbols("aa"), 2, v).empty());
    CHECK(enumerate_alignments(labels_from_symbols("aa"), 3, v).size() == 1);
}

TEST_CASE("enumerate_alignments enforces its budget") {
    Vocabulary v = Vocabulary::letters(2);
    CHECK_THROWS_AS(enumerate_alignments(labels_from_symbols("a"), 13, v), ShapeError);
}

TEST_CASE("every enumerated alignment collapses back to y (exhaustive small)") {
    Vocabulary v = Vocabulary::letters(2);
    for (const char* ys : {"", "a", "b", "ab", "aa", "aba"}) {
        for (int t = 0; t <= 6; ++t) {
            for (const auto& a : enumerate_alignments(labels_from_symbols(ys), t, v)) {
                CHECK(collapse(a, v) == labels_from_symbols(ys));
            }
        }
    }
}

TEST_CASE("ctc likelihood: uniform rows, y=a, T=2") {
    Vocabulary v = Vocabulary::letters(2);
    Tensor logp = Tensor::full({2, 3}, -std::log(3.0));
    Tensor ll = ctc_log_likelihood(logp, labels_from_symbols("a"), v);
    CHECK(ll.item() == doctest::Approx(std::log(3.0 / 9.0)).epsilon(1e-12));
}

TEST_CASE("ctc likelihood of empty target is sum of blank log-probs") {
    Vocabulary v = Vocabulary::letters(2);
    std::mt19937_64 rng(2);
    Tensor logp = random_log_probs(5, v, rng);
    double expect = 0.0;
    for (int t = 0; t < 5; ++t) expect += logp.at(t * 3 + 0);
    Tensor ll = ctc_log_likelihood(logp, LabelSequence{}, v);
    CHECK(ll.item() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("ctc likelihood of unreachable target is -inf, not a crash") {
    Vocabulary v = Vocabulary::letters(1);
    Tensor logp = Tensor::full({2, 2}, -std::log(2.0));
    Tensor ll = ctc_log_likelihood(logp, labels_from_symbols("aa"), v);
    CHECK(is_neg_inf(ll));
}

TEST_CASE("DP equals brute-force oracle on random instances") {
    std::mt19937_64 rng(77);
    int done = 0;
    while (done < 200) {
        int num_labels = 1 + static_cast<int>(rng() % 3);
        Vocabulary v = Vocabulary::letters(num_labels);
        int t = 2 + static_cast<int>(rng() % 7);  // up to 8
        int ylen = static_cast<int>(rng() % 5);   // up to 4
        LabelSequence y;
        for (int i = 0; i < ylen; ++i) y.ids.push_back(1 + static_cast<int>(rng() % num_labels));
        Tensor logp = random_log_probs(t, v, rng);
        double oracle = oracle_log_likelihood(logp, y, v);
        Tensor dp = ctc_log_likelihood(logp, y, v);
        if (std::isinf(oracle)) {
            CHECK(is_neg_inf(dp));
        } else {
            CHECK(std::abs(std::exp(dp.item()) - std::exp(oracle)) <=
                  1e-9 * std::abs(std::exp(oracle)));
        }
        ++done;
    }
}

TEST_CASE("normalization: likelihoods over all collapses sum to one") {
    Vocabulary v = Vocabulary::letters(2);
    int t = 4;
    Tensor logp = Tensor::full({t, 3}, -std::log(3.0));
    // group all strings over L' by collapse
    std::map<std::vector<int>, int> counts;
    for (int code = 0; code < 81; ++code) {
        Alignment a;
        int c = code;
        for (int i = 0; i < t; ++i) {
            a.ids.push_back(c % 3);
            c /= 3;
        }
        counts[collapse(a, v).ids]++;
    }
    double total = 0.0;
    for (const auto& [ids, n] : counts) {
        LabelSequence y{ids};
        Tensor ll = ctc_log_likelihood(logp, y, v);
        double p = std::exp(ll.item());
        CHECK(p == doctest::Approx(n / 81.0).epsilon(1e-9));
        total += p;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("ctc gradient wrt row logits matches finite differences") {
    std::mt19937_64 rng(5);
    Vocabulary v = Vocabulary::letters(3);
    LabelSequence y = labels_from_symbols("bac");
    Tensor logits = Tensor::zeros({6, 4});
    std::normal_distribution<double> d(0.0, 1.0);
    for (auto& x : logits.mutable_data()) x = d(rng);
    double err = grad_check(
        [&](const Tensor& x) {
            Tensor logp = log_softmax_rows(x);
            return scale(ctc_log_likelihood(logp, y, v), -1.0);
        },
        logits, 1e-6);
    CHECK(err < 1e-4);
}

TEST_CASE("greedy alignment: one-hot rows recover the encoded alignment") {
    Vocabulary v = Vocabulary::letters(2);
    Alignment truth = align_from_symbols("ab_a");
    Tensor logp = Tensor::full({4, 3}, -40.0);
    for (int t = 0; t < 4; ++t) logp.mutable_data()[t * 3 + truth.ids[t]] = -1e-9;
    CHECK(greedy_alignment(logp) == truth);
}

TEST_CASE("greedy alignment ties break to lowest id") {
    Tensor logp = Tensor::full({3, 4}, -std::log(4.0));
    Alignment a = greedy_alignment(logp);
    for (int id : a.ids) CHECK(id == 0);
}

TEST_CASE("greedy alignment is reproducible bit-for-bit") {
    std::mt19937_64 rng(9);
    Vocabulary v = Vocabulary::letters(3);
    Tensor logp = random_log_probs(10, v, rng);
    Alignment a1 = greedy_alignment(logp);
    Alignment a2 = greedy_alignment(logp);
    CHECK(a1 == a2);
    // independent per-row argmax scan
    for (int t = 0; t < 10; ++t) {
        int best = 0;
        for (int j = 1; j < 4; ++j)
            if (logp.at(t * 4 + j) > logp.at(t * 4 + best)) best = j;
        CHECK(a1.ids[t] == best);
    }
}

TEST_CASE("token confidences: one-hot rows give 1.0") {
    Vocabulary v = Vocabulary::letters(2);
    Alignment a = align_from_symbols("aab_b");
    Tensor logp = Tensor::full({5, 3}, -1e9);
    for (int t = 0; t < 5; ++t) logp.mutable_data()[t * 3 + a.ids[t]] = 0.0;
    auto conf = token_confidences(logp, a, v);
    REQUIRE(conf.size() == 3);  // "aab_b" collapses to "abb"
    for (double c : conf) CHECK(c == doctest::Approx(1.0));
}

TEST_CASE("token confidences: all-blank alignment gives empty list") {
    Vocabulary v = Vocabulary::letters(2);
    Tensor logp = Tensor::full({3, 3}, -std::log(3.0));
    auto conf = token_confidences(logp, align_from_symbols("___"), v);
    CHECK(conf.empty());
}

TEST_CASE("token confidences: known run maxima") {
    Vocabulary v = Vocabulary::letters(1);
    // alignment a a _ a ; token runs: frames {0,1} and frame {3}
    Alignment a = align_from_symbols("aa_a");
    Tensor logp = Tensor::zeros({4, 2});
    double pa[4] = {0.6, 0.8, 0.1, 0.55};
    for (int t = 0; t < 4; ++t) {
        logp.mutable_data()[t * 2 + 1] = std::log(pa[t]);
        logp.mutable_data()[t * 2 + 0] = std::log(1.0 - pa[t]);
    }
    auto conf = token_confidences(logp, a, v);
    REQUIRE(conf.size() == 2);
    CHECK(conf[0] == doctest::Approx(0.8));
    CHECK(conf[1] == doctest::Approx(0.55));
    auto conf_min = token_confidences(logp, a, v, ConfidenceMode::Min);
    CHECK(conf_min[0] == doctest::Approx(0.6));
    auto conf_mean = token_confidences(logp, a, v, ConfidenceMode::Mean);
    CHECK(conf_mean[0] == doctest::Approx(0.7));
}

TEST_CASE("token confidences reject length mismatch") {
    Vocabulary v = Vocabulary::letters(1);
    Tensor logp = Tensor::full({3, 2}, -std::log(2.0));
    CHECK_THROWS_AS(token_confidences(logp, align_from_symbols("aa"), v), ShapeError);
}

TEST_CASE("canonical alignment collapses to its target") {
    Vocabulary v = Vocabulary::letters(3);
    for (const char* ys : {"a", "abc", "aabb", "cba"}) {
        LabelSequence y = labels_from_symbols(ys);
        for (int t = min_alignment_frames(y); t <= 12; ++t) {
            Alignment a = canonical_alignment(y, t, v);
            CHECK(a.length() == t);
            CHECK(collapse(a, v) == y);
        }
    }
}
