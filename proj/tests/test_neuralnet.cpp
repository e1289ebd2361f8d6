#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "mgrid/neuralnet.hpp"

using namespace mgrid;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> vals) {
  Eigen::VectorXd v(static_cast<int>(vals.size()));
  int i = 0;
  for (double x : vals) v(i++) = x;
  return v;
}

}  // namespace

TEST_CASE("all-zero network maps every input to zero") {
  Rng rng(1);
  Mlp net(3, {4}, 2, rng);
  for (int l = 0; l < net.layer_count(); ++l) {
    net.weight_mutable(l).setZero();
    net.bias_mutable(l).setZero();
  }
  const Eigen::VectorXd out = net.forward(vec({1.0, -2.0, 3.0}));
  CHECK(out.isZero(0.0));
}

TEST_CASE("single linear layer with identity weights passes the input through") {
  Rng rng(1);
  Mlp net(3, {}, 3, rng);
  net.weight_mutable(0).setIdentity();
  net.bias_mutable(0).setZero();
  const Eigen::VectorXd in = vec({0.5, -1.5, 2.0});
  CHECK((net.forward(in) - in).norm() == doctest::Approx(0.0));
}

TEST_CASE("negative hidden pre-activations are gated off downstream") {
  Rng rng(1);
  Mlp net(1, {1}, 1, rng);
  net.weight_mutable(0)(0, 0) = 1.0;
  net.bias_mutable(0)(0) = 0.0;
  net.weight_mutable(1)(0, 0) = 5.0;
  net.bias_mutable(1)(0) = 0.0;
  CHECK(net.forward(vec({2.0}))(0) == doctest::Approx(10.0));
  CHECK(net.forward(vec({-2.0}))(0) == doctest::Approx(0.0));
}

TEST_CASE("forward rejects a shape mismatch") {
  Rng rng(1);
  Mlp net(3, {4}, 2, rng);
  CHECK_THROWS_AS(net.forward(vec({1.0, 2.0})), Error);
}

TEST_CASE("mse basics") {
  const std::vector<double> a{1.0, 2.0}, b{1.0, 2.0};
  CHECK(mse_loss(a, b) == 0.0);
  const std::vector<double> c{0.0, 0.0}, d{2.0, 0.0};
  CHECK(mse_loss(c, d) == doctest::Approx(2.0));
  const std::vector<double> e{1.0, 5.0}, f{2.0, 3.0};
  const std::vector<double> e2{5.0, 1.0}, f2{3.0, 2.0};
  CHECK(mse_loss(e, f) == doctest::Approx(mse_loss(e2, f2)));
  const std::vector<double> g{1.0};
  CHECK_THROWS_AS(mse_loss(g, c), Error);
}

TEST_CASE("analytic gradients match central differences on random networks") {
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const int in = 1 + static_cast<int>(rng.uniform_below(8));
    const int h1 = 1 + static_cast<int>(rng.uniform_below(24));
    const int h2 = 1 + static_cast<int>(rng.uniform_below(24));
    const int out = 1 + static_cast<int>(rng.uniform_below(16));
    Mlp net(in, {h1, h2}, out, rng);
    Eigen::VectorXd x(in), target(out);
    for (int i = 0; i < in; ++i) x(i) = rng.uniform(-1.0, 1.0);
    for (int i = 0; i < out; ++i) target(i) = rng.uniform(-1.0, 1.0);

    auto loss_of = [&](const Mlp& m) {
      const Eigen::VectorXd y = m.forward(x);
      return (y - target).squaredNorm() / out;
    };

    Mlp::Tape tape;
    const Eigen::VectorXd y = net.forward(x, tape);
    const Eigen::VectorXd upstream = 2.0 / out * (y - target);
    const Mlp::Gradients grads = net.backward(tape, upstream);

    const double h = 1e-5;
    int checked = 0;
    for (int layer = 0; layer < net.layer_count(); ++layer) {
      for (int r = 0; r < net.weight(layer).rows() && checked < 60; ++r) {
        for (int c = 0; c < net.weight(layer).cols() && checked < 60; ++c) {
          Mlp plus = net.clone();
          Mlp minus = net.clone();
          plus.weight_mutable(layer)(r, c) += h;
          minus.weight_mutable(layer)(r, c) -= h;
          const double fd = (loss_of(plus) - loss_of(minus)) / (2.0 * h);
          const double an = grads.dw[layer](r, c);
          CHECK(std::abs(an - fd) <= 1e-4 * std::max(1e-2, std::abs(fd)) + 1e-6);
          ++checked;
        }
      }
    }
  }
}

TEST_CASE("zero upstream gradient backpropagates to zero parameter gradients") {
  Rng rng(3);
  Mlp net(4, {8}, 3, rng);
  Mlp::Tape tape;
  net.forward(vec({0.1, 0.2, -0.3, 0.4}), tape);
  const Mlp::Gradients g = net.backward(tape, Eigen::VectorXd::Zero(3));
  for (const auto& dw : g.dw) CHECK(dw.isZero(0.0));
  for (const auto& db : g.db) CHECK(db.isZero(0.0));
}

TEST_CASE("dead relu paths carry no gradient") {
  Rng rng(1);
  Mlp net(1, {1}, 1, rng);
  net.weight_mutable(0)(0, 0) = 1.0;
  net.bias_mutable(0)(0) = -10.0;  // hidden unit firmly off for small inputs
  net.weight_mutable(1)(0, 0) = 3.0;
  Mlp::Tape tape;
  net.forward(vec({1.0}), tape);
  const Mlp::Gradients g = net.backward(tape, vec({1.0}));
  CHECK(g.dw[0](0, 0) == 0.0);
  CHECK(g.db[0](0) == 0.0);
  CHECK(g.dw[1](0, 0) == 0.0);  // input to the output layer is 0
}

TEST_CASE("adam leaves weights in place when gradients are zero") {
  Rng rng(5);
  Mlp net(2, {4}, 2, rng);
  const Mlp before = net.clone();
  AdamState opt = AdamState::for_network(net);
  adam_step(net, net.zero_gradients(), opt);
  for (int l = 0; l < net.layer_count(); ++l)
    CHECK((net.weight(l) - before.weight(l)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("adam descends a quadratic monotonically") {
  Rng rng(5);
  Mlp net(1, {}, 1, rng);
  net.weight_mutable(0)(0, 0) = 2.0;
  net.bias_mutable(0)(0) = 0.0;
  AdamState opt = AdamState::for_network(net, 1e-2);
  double prev = std::abs(net.weight(0)(0, 0));
  for (int i = 0; i < 100; ++i) {
    Mlp::Gradients g = net.zero_gradients();
    g.dw[0](0, 0) = 2.0 * net.weight(0)(0, 0);  // d/dw of w^2
    adam_step(net, g, opt);
    const double cur = std::abs(net.weight(0)(0, 0));
    CHECK(cur <= prev + 1e-12);
    prev = cur;
  }
  CHECK(prev < 2.0);
}

TEST_CASE("adam updates are deterministic") {
  auto make = [] {
    Rng rng(11);
    Mlp net(3, {5}, 2, rng);
    return net;
  };
  Mlp a = make(), b = make();
  AdamState oa = AdamState::for_network(a), ob = AdamState::for_network(b);
  Mlp::Tape tape;
  const Eigen::VectorXd x = vec({0.3, -0.2, 0.9});
  for (int i = 0; i < 5; ++i) {
    const Eigen::VectorXd ya = a.forward(x, tape);
    adam_step(a, a.backward(tape, ya), oa);
    const Eigen::VectorXd yb = b.forward(x, tape);
    adam_step(b, b.backward(tape, yb), ob);
  }
  for (int l = 0; l < a.layer_count(); ++l)
    CHECK((a.weight(l) - b.weight(l)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("clone is a deep copy") {
  Rng rng(2);
  Mlp a(2, {3}, 1, rng);
  Mlp b = a.clone();
  CHECK(b.same_shape(a));
  const Eigen::VectorXd x = vec({0.4, -0.7});
  CHECK(a.forward(x)(0) == b.forward(x)(0));
  a.weight_mutable(0)(0, 0) += 1.0;
  CHECK(a.forward(x)(0) != b.forward(x)(0));
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  Rng rng(123);
  Mlp a(5, {24, 24}, 16, rng);
  const std::string path = std::filesystem::temp_directory_path() / "mgrid_ckpt_test.json";
  a.save_file(path);
  const Mlp b = Mlp::load_file(path);
  REQUIRE(b.same_shape(a));
  for (int l = 0; l < a.layer_count(); ++l) {
    CHECK((a.weight(l) - b.weight(l)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.bias(l) - b.bias(l)).cwiseAbs().maxCoeff() == 0.0);
  }
  // and the file itself is reproducible
  const std::string path2 = std::filesystem::temp_directory_path() / "mgrid_ckpt_test2.json";
  b.save_file(path2);
  CHECK(a.to_json() == b.to_json());
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("checkpoint loader rejects malformed input") {
  CHECK_THROWS_AS(Mlp::from_json("not json"), Error);
  CHECK_THROWS_AS(Mlp::from_json("{\"format\":\"other\"}"), Error);
  CHECK_THROWS_AS(
      Mlp::from_json(
          "{\"format\":\"mgrid-mlp\",\"version\":1,\"layers\":[{\"in\":2,\"out\":1,\"w\":[1.0],"
          "\"b\":[0.0]}]}"),
      Error);
}

TEST_CASE("small network fits a random 3-bit boolean table") {
  Rng rng(7);
  Mlp net(3, {24, 24}, 1, rng);
  AdamState opt = AdamState::for_network(net, 1e-3);
  double targets[8];
  for (int i = 0; i < 8; ++i) targets[i] = static_cast<double>(rng.uniform_below(2));

  double loss = 1.0;
  for (int step = 0; step < 5000 && loss >= 1e-2; ++step) {
    Mlp::Gradients grads = net.zero_gradients();
    loss = 0.0;
    for (int i = 0; i < 8; ++i) {
      Eigen::VectorXd x(3);
      x << (i & 1), ((i >> 1) & 1), ((i >> 2) & 1);
      Mlp::Tape tape;
      const Eigen::VectorXd y = net.forward(x, tape);
      const double err = y(0) - targets[i];
      loss += err * err / 8.0;
      Mlp::Gradients g = net.backward(tape, vec({2.0 * err / 8.0}));
      grads.add(g);
    }
    adam_step(net, grads, opt);
  }
  CHECK(loss < 1e-2);
  CHECK(net.all_finite());
}
