#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <set>

#include "mgrid/common.hpp"
#include "mgrid/consensus.hpp"

using namespace mgrid;

namespace {

Eigen::MatrixXd adjacency(int n, const std::vector<std::pair<int, int>>& edges) {
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
  for (auto [a, b] : edges) {
    s(a, b) = 1.0;
    s(b, a) = 1.0;
  }
  return s;
}

Eigen::VectorXd pin_first(int n, double g = 1.0) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
  v(0) = g;
  return v;
}

}  // namespace

TEST_CASE("laplacian of the empty graph is zero") {
  const Eigen::MatrixXd l = build_laplacian(Eigen::MatrixXd::Zero(3, 3));
  CHECK(l.isZero(0.0));
}

TEST_CASE("laplacian of a single edge") {
  const Eigen::MatrixXd l = build_laplacian(adjacency(2, {{0, 1}}));
  CHECK(l(0, 0) == 1.0);
  CHECK(l(0, 1) == -1.0);
  CHECK(l(1, 0) == -1.0);
  CHECK(l(1, 1) == 1.0);
}

TEST_CASE("laplacian of K4") {
  const Eigen::MatrixXd s = Eigen::MatrixXd::Ones(4, 4) - Eigen::MatrixXd::Identity(4, 4);
  const Eigen::MatrixXd l = build_laplacian(s);
  for (int i = 0; i < 4; ++i) {
    CHECK(l(i, i) == 3.0);
    CHECK(l.row(i).sum() == doctest::Approx(0.0));
    for (int j = 0; j < 4; ++j)
      if (i != j) CHECK(l(i, j) == -1.0);
  }
}

TEST_CASE("laplacian rejects asymmetric adjacency") {
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(3, 3);
  s(0, 1) = 1.0;
  CHECK_THROWS_AS(build_laplacian(s), Error);
}

TEST_CASE("lambda2: single edge unpinned has smallest eigenvalue zero") {
  const Eigen::MatrixXd l = build_laplacian(adjacency(2, {{0, 1}}));
  CHECK(lambda2_of(l, Eigen::VectorXd::Zero(2)) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("lambda2: K4 spectrum is {0, 4, 4, 4}") {
  const Eigen::MatrixXd s = Eigen::MatrixXd::Ones(4, 4) - Eigen::MatrixXd::Identity(4, 4);
  const Eigen::MatrixXd l = build_laplacian(s);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(l);
  CHECK(es.eigenvalues()(0) == doctest::Approx(0.0));
  for (int i = 1; i < 4; ++i) CHECK(es.eigenvalues()(i) == doctest::Approx(4.0));
}

TEST_CASE("lambda2: pinning K4 shifts the zero mode up") {
  const Eigen::MatrixXd s = Eigen::MatrixXd::Ones(4, 4) - Eigen::MatrixXd::Identity(4, 4);
  const double lam = lambda2_of(build_laplacian(s), pin_first(4));
  CHECK(lam > 0.0);
  CHECK(lam < 1.0);
}

TEST_CASE("min_consensus_gain arithmetic") {
  CommTopology t;
  t.lambda2 = 4.0;
  CHECK(min_consensus_gain(t) == doctest::Approx(0.125));
  t.lambda2 = 0.5;
  CHECK(min_consensus_gain(t) == doctest::Approx(1.0));
  t.lambda2 = 0.0;
  CHECK_THROWS_AS(min_consensus_gain(t), Error);
}

TEST_CASE("validate_topology") {
  SUBCASE("star centered at pinned node") {
    CHECK(validate_topology(adjacency(4, {{0, 1}, {0, 2}, {0, 3}}), pin_first(4)));
  }
  SUBCASE("empty graph") {
    CHECK_FALSE(validate_topology(Eigen::MatrixXd::Zero(4, 4), pin_first(4)));
  }
  SUBCASE("two disjoint edges") {
    CHECK_FALSE(validate_topology(adjacency(4, {{0, 1}, {2, 3}}), pin_first(4)));
  }
  SUBCASE("connected but unpinned") {
    CHECK_FALSE(validate_topology(adjacency(3, {{0, 1}, {1, 2}}), Eigen::VectorXd::Zero(3)));
  }
}

TEST_CASE("enumerate_topologies counts follow Cayley's formula") {
  CHECK(enumerate_topologies(2, pin_first(2)).size() == 1);
  CHECK(enumerate_topologies(3, pin_first(3)).size() == 3);
  CHECK(enumerate_topologies(4, pin_first(4)).size() == 16);
  CHECK(enumerate_topologies(5, pin_first(5)).size() == 125);
  CHECK_THROWS_AS(enumerate_topologies(1, pin_first(1)), Error);
  CHECK_THROWS_AS(enumerate_topologies(9, pin_first(9)), Error);
}

TEST_CASE("enumeration matches brute force over edge subsets") {
  for (int n = 3; n <= 5; ++n) {
    CHECK(static_cast<int>(enumerate_topologies(n, pin_first(n)).size()) ==
          count_spanning_trees_bruteforce(n));
  }
}

TEST_CASE("every enumerated topology is valid with positive lambda2") {
  const auto topos = enumerate_topologies(4, pin_first(4));
  std::set<std::vector<std::pair<int, int>>> seen;
  for (const CommTopology& t : topos) {
    CHECK(validate_topology(t.s, t.g));
    CHECK(t.lambda2 > 0.0);
    CHECK(t.laplacian.rowwise().sum().isZero(1e-12));
    seen.insert(t.edges());
  }
  CHECK(seen.size() == topos.size());  // all distinct
  // lexicographic ordering gives stable ids
  for (std::size_t i = 0; i + 1 < topos.size(); ++i)
    CHECK(topos[i].edges() < topos[i + 1].edges());
  CHECK(topos[0].edges() == std::vector<std::pair<int, int>>{{0, 1}, {0, 2}, {0, 3}});
}

TEST_CASE("consensus rates vanish at the synchronized fixed point") {
  const double omega_n = 314.159;
  std::vector<ReceivedTuple> recv{{1, omega_n, 0.2, 0.1}, {2, omega_n, 0.2, 0.1}};
  const ConsensusRates r = consensus_rates(recv, omega_n, 0.2, 0.1, 1.0, 30.0, 30.0, omega_n);
  CHECK(r.delta_omega_dot == doctest::Approx(0.0));
  CHECK(r.delta_v_dot == doctest::Approx(0.0));
}

TEST_CASE("isolated unpinned node has zero rates") {
  const ConsensusRates r = consensus_rates({}, 310.0, 0.5, 0.2, 0.0, 30.0, 30.0, 314.159);
  CHECK(r.delta_omega_dot == 0.0);
  CHECK(r.delta_v_dot == 0.0);
}

TEST_CASE("pinned node alone tracks the nominal reference") {
  const double k1 = 12.0, g = 1.0, omega_n = 314.159, own = 313.0;
  const ConsensusRates r = consensus_rates({}, own, 0.0, 0.0, g, k1, k1, omega_n);
  CHECK(r.delta_omega_dot == doctest::Approx(k1 * g * (omega_n - own)));
  CHECK(r.delta_v_dot == 0.0);
}

TEST_CASE("fixed point is invariant under scaling the consensus gains") {
  const double omega_n = 314.159;
  std::vector<ReceivedTuple> recv{{1, omega_n, 0.31, 0.07}};
  for (double k : {1.0, 7.5, 120.0}) {
    const ConsensusRates r = consensus_rates(recv, omega_n, 0.31, 0.07, 1.0, k, k, omega_n);
    CHECK(r.delta_omega_dot == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(r.delta_v_dot == doctest::Approx(0.0).epsilon(1e-14));
  }
}

TEST_CASE("lyapunov diagnostic arithmetic") {
  LyapunovSample a, b;
  a.t = 0.0;
  b.t = 0.1;
  a.omega = {314.159, 314.159, 314.159, 314.159};
  b.omega = a.omega;
  a.mpp = {0.0, 0.0, 0.0, 0.0};
  b.mpp = a.mpp;
  a.nqq = a.mpp;
  b.nqq = a.mpp;

  SUBCASE("all y zero gives V = 0") {
    a.y = {0.0, 0.0, 0.0, 0.0};
    b.y = a.y;
    const LyapunovSample win[2] = {a, b};
    const ConvergenceReport rep = lyapunov_diagnostic(win, 314.159, pin_first(4));
    CHECK(rep.v == 0.0);
  }
  SUBCASE("y = ones gives V = 2 for four DGs") {
    a.y = {1.0, 1.0, 1.0, 1.0};
    b.y = a.y;
    const LyapunovSample win[2] = {a, b};
    const ConvergenceReport rep = lyapunov_diagnostic(win, 314.159, pin_first(4));
    CHECK(rep.v == doctest::Approx(2.0));
    CHECK(rep.v_dot == doctest::Approx(0.0));
  }
  SUBCASE("window of one sample is rejected") {
    a.y = {0.0, 0.0, 0.0, 0.0};
    const LyapunovSample win[1] = {a};
    CHECK_THROWS_AS(lyapunov_diagnostic(win, 314.159, pin_first(4)), Error);
  }
}

TEST_CASE("topology set export carries edges, lambda2 and gain bound") {
  const auto topos = enumerate_topologies(3, pin_first(3));
  const std::string text = topology_set_json(topos);
  CHECK(text.find("\"count\": 3") != std::string::npos);
  CHECK(text.find("lambda2") != std::string::npos);
  CHECK(text.find("k_min") != std::string::npos);
}
