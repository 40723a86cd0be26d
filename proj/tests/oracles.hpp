#pragma once

// Brute-force reference implementations used to check the library. They are
// deliberately naive and share no code with src/.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace oracle {

struct Prop {
  std::string id;
  std::string source;   // "PCT" / "WVS"
  std::string issue;    // "cultural" / "economic"
  std::string leaning;  // "left" / "right" for the original statement
  std::string variant;  // "original" / "reworded" / "opposite"
};

struct Rec {
  std::string prop_id;
  std::string prefix;
  std::string model;
  std::string label;  // "agree" / "disagree" / "neutral" / "unrelated"
  std::string method; // "likert_integer" / "classifier"
};

struct Filter {
  std::string issue = "*";
  std::string source = "*";
  std::string prefix = "*";
  std::string variant = "*";
  std::string method = "*";
};

struct Side {
  long agree = 0, disagree = 0, neutral = 0, unrelated = 0;
};

struct Profile {
  Side left, right;
  std::optional<double> p_agree_left, p_agree_right, p_disagree_left, p_disagree_right;
  std::optional<double> bias_left, bias_right, total;
};

inline std::string side_of(const Prop& p) {
  if (p.variant != "opposite") return p.leaning;
  return p.leaning == "left" ? "right" : "left";
}

inline Profile recount(const std::vector<Prop>& props, const std::vector<Rec>& recs, const std::string& model,
                       const Filter& f) {
  Profile out;
  for (const auto& r : recs) {
    if (r.model != model) continue;
    const Prop* p = nullptr;
    for (const auto& candidate : props)
      if (candidate.id == r.prop_id) p = &candidate;
    if (!p) continue;
    if (f.issue != "*" && f.issue != p->issue) continue;
    if (f.source != "*" && f.source != p->source) continue;
    if (f.prefix != "*" && f.prefix != r.prefix) continue;
    if (f.variant != "*" && f.variant != p->variant) continue;
    if (f.method != "*" && f.method != r.method) continue;
    Side& s = side_of(*p) == "left" ? out.left : out.right;
    if (r.label == "agree") s.agree++;
    if (r.label == "disagree") s.disagree++;
    if (r.label == "neutral") s.neutral++;
    if (r.label == "unrelated") s.unrelated++;
  }
  auto rates = [](const Side& s, std::optional<double>& pa, std::optional<double>& pd, std::optional<double>& b) {
    long n = s.agree + s.disagree + s.neutral;
    if (n == 0) return;
    pa = double(s.agree) / double(n);
    pd = double(s.disagree) / double(n);
    b = *pa - *pd;
  };
  rates(out.left, out.p_agree_left, out.p_disagree_left, out.bias_left);
  rates(out.right, out.p_agree_right, out.p_disagree_right, out.bias_right);
  if (out.bias_left && out.bias_right) out.total = 0.5 * (*out.bias_right - *out.bias_left);
  return out;
}

/// Pair enumeration: tau-b and the raw concordant/discordant counts.
struct Tau {
  double tau = 0;
  long concordant = 0, discordant = 0;
};

inline Tau kendall_pairs(const std::vector<double>& x, const std::vector<double>& y) {
  Tau t;
  long tied_x = 0, tied_y = 0, pairs = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      ++pairs;
      double dx = x[i] - x[j], dy = y[i] - y[j];
      if (dx == 0) ++tied_x;
      if (dy == 0) ++tied_y;
      if (dx * dy > 0) ++t.concordant;
      if (dx * dy < 0) ++t.discordant;
    }
  t.tau = double(t.concordant - t.discordant) / std::sqrt(double(pairs - tied_x) * double(pairs - tied_y));
  return t;
}

/// Two-sided permutation p-value: share of all orderings of y whose |S| is at
/// least the observed one.
inline double kendall_perm_p(const std::vector<double>& x, const std::vector<double>& y) {
  auto s_of = [&](const std::vector<double>& yy) {
    auto t = kendall_pairs(x, yy);
    return std::labs(t.concordant - t.discordant);
  };
  const long observed = s_of(y);
  std::vector<std::size_t> idx(y.size());
  std::iota(idx.begin(), idx.end(), 0);
  long total = 0, hits = 0;
  std::vector<double> yy(y.size());
  do {
    for (std::size_t i = 0; i < idx.size(); ++i) yy[i] = y[idx[i]];
    ++total;
    hits += s_of(yy) >= observed;
  } while (std::next_permutation(idx.begin(), idx.end()));
  return double(hits) / double(total);
}

/// Cohen's kappa from an explicit contingency table.
inline double kappa_table(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::string> cats(a);
  cats.insert(cats.end(), b.begin(), b.end());
  std::sort(cats.begin(), cats.end());
  cats.erase(std::unique(cats.begin(), cats.end()), cats.end());
  const std::size_t k = cats.size();
  std::vector<std::vector<double>> table(k, std::vector<double>(k, 0.0));
  auto at = [&](const std::string& c) { return std::size_t(std::lower_bound(cats.begin(), cats.end(), c) - cats.begin()); };
  for (std::size_t i = 0; i < a.size(); ++i) table[at(a[i])][at(b[i])] += 1.0;
  const double n = double(a.size());
  double diag = 0, expected = 0;
  for (std::size_t i = 0; i < k; ++i) {
    diag += table[i][i];
    double row = 0, col = 0;
    for (std::size_t j = 0; j < k; ++j) {
      row += table[i][j];
      col += table[j][i];
    }
    expected += row * col;
  }
  const double po = diag / n, pe = expected / (n * n);
  if (pe == 1.0) return 1.0;
  return (po - pe) / (1.0 - pe);
}

}  // namespace oracle
