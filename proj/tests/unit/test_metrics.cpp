#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <vector>

#include <spdlog/spdlog.h>

#include "moext/errors.hpp"
#include "moext/metrics.hpp"
#include "moext/rng.hpp"

using namespace moext;
using namespace moext::eval;

namespace {

std::vector<std::string> names(int c) {
  std::vector<std::string> out;
  for (int k = 0; k < c; ++k) out.push_back("c" + std::to_string(k));
  return out;
}

// Straight from the definitions: per-class TP/FP/FN, then macro averages over
// classes that have at least one true sample.
struct Oracle {
  double uf1 = 0, uar = 0, acc = 0;
};

Oracle brute(const std::vector<std::vector<long>>& m) {
  const int c = static_cast<int>(m.size());
  Oracle o;
  long total = 0, diag = 0;
  int present = 0;
  for (int k = 0; k < c; ++k) {
    long tp = m[k][k], fn = 0, fp = 0;
    for (int j = 0; j < c; ++j) {
      total += m[k][j];
      if (j != k) {
        fn += m[k][j];
        fp += m[j][k];
      }
    }
    diag += tp;
    if (tp + fn == 0) continue;
    ++present;
    o.uf1 += 2.0 * tp / (2.0 * tp + fp + fn);
    o.uar += static_cast<double>(tp) / (tp + fn);
  }
  if (present) {
    o.uf1 /= present;
    o.uar /= present;
  }
  o.acc = total ? static_cast<double>(diag) / total : 0.0;
  return o;
}

}  // namespace

TEST_CASE("worked examples") {
  ConfusionMatrix a(names(2), {{2, 0}, {1, 1}});
  CHECK(uf1(a) == doctest::Approx(0.7333333333).epsilon(1e-9));
  CHECK(acc(a) == 0.75);
  CHECK(uar(a) == 0.75);
  ConfusionMatrix b(names(2), {{1, 1}, {1, 1}});
  CHECK(uar(b) == 0.5);
  CHECK(uf1(b) == 0.5);
  ConfusionMatrix wrong(names(2), {{0, 3}, {3, 0}});
  CHECK(acc(wrong) == 0.0);
  CHECK(uf1(wrong) == 0.0);
  CHECK_THROWS_AS(acc(ConfusionMatrix(names(2))), ShapeError);
  ConfusionMatrix perfect(names(3), {{4, 0, 0}, {0, 2, 0}, {0, 0, 7}});
  CHECK(uf1(perfect) == 1.0);
  CHECK(uar(perfect) == 1.0);
  CHECK(acc(perfect) == 1.0);
}

TEST_CASE("random matrices agree with the brute-force oracle") {
  spdlog::set_level(spdlog::level::err);  // absent-class warnings are expected here
  Rng rng(1234);
  for (int trial = 0; trial < 1000; ++trial) {
    const int c = 2 + static_cast<int>(rng.below(6));  // up to 7 classes
    std::vector<std::vector<long>> m(c, std::vector<long>(c));
    for (auto& row : m)
      for (auto& v : row) v = static_cast<long>(rng.below(rng.below(4) == 0 ? 1 : 51));
    if (std::accumulate(m[0].begin(), m[0].end(), 0L) == 0) m[0][0] = 1;
    const ConfusionMatrix cm(names(c), m);
    const Oracle o = brute(m);
    CHECK(std::abs(uf1(cm) - o.uf1) <= 1e-12);
    CHECK(std::abs(uar(cm) - o.uar) <= 1e-12);
    CHECK(std::abs(acc(cm) - o.acc) <= 1e-12);
    CHECK(uf1(cm) >= 0.0);
    CHECK(uf1(cm) <= 1.0);
    CHECK(uar(cm) >= 0.0);
    CHECK(uar(cm) <= 1.0);
  }
}

TEST_CASE("metrics are invariant under a joint relabelling of classes") {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const int c = 2 + static_cast<int>(rng.below(4));
    std::vector<std::vector<long>> m(c, std::vector<long>(c));
    for (auto& row : m)
      for (auto& v : row) v = 1 + static_cast<long>(rng.below(9));
    std::vector<int> perm(c);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm.begin(), perm.end());
    std::vector<std::vector<long>> p(c, std::vector<long>(c));
    for (int i = 0; i < c; ++i)
      for (int j = 0; j < c; ++j) p[perm[i]][perm[j]] = m[i][j];
    const ConfusionMatrix a(names(c), m), b(names(c), p);
    CHECK(std::abs(uf1(a) - uf1(b)) <= 1e-12);
    CHECK(std::abs(uar(a) - uar(b)) <= 1e-12);
    CHECK(acc(a) == acc(b));
  }
}

TEST_CASE("absent classes are left out and reported") {
  ConfusionMatrix cm(names(3), {{3, 0, 0}, {0, 0, 0}, {1, 0, 2}});
  const auto r = uar_detailed(cm);
  CHECK(r.effective_classes == 2);
  CHECK(!r.warnings.empty());
  CHECK(r.value == doctest::Approx((1.0 + 2.0 / 3) / 2));
  const auto f = uf1_detailed(cm);
  CHECK(f.effective_classes == 2);
  CHECK(f.value == doctest::Approx((6.0 / 7 + 4.0 / 5) / 2));
}

TEST_CASE("accumulation and bookkeeping") {
  ConfusionMatrix a(names(3)), b(names(3));
  a.add(0, 1);
  a.add(2, 2, 3);
  b.add(0, 1);
  b.add(1, 0);
  a += b;
  CHECK(a.count(0, 1) == 2);
  CHECK(a.count(2, 2) == 3);
  CHECK(a.total() == 6);
  CHECK(a.true_count(0) == 2);
  CHECK(a.predicted_count(0) == 1);
  CHECK(a.rows()[1][0] == 1);
  const auto j = a.to_json();
  CHECK(j.dump().find("c2") != std::string::npos);
  ConfusionMatrix other(names(2));
  CHECK_THROWS(a += other);
  CHECK_THROWS(a.add(3, 0));
}
