#include <catch_amalgamated.hpp>

#include <vector>

#include "fd_check.hpp"
#include "rgm/rng.hpp"
#include "rgm/tape.hpp"

using rgm::Parameter;
using rgm::RngState;
using rgm::Tape;
using rgm::Tensor;
using NodeId = rgm::Tape<double>::NodeId;

namespace {
constexpr double kTol = 1e-4;

Parameter<double> randp(const char* name, std::vector<int> shape, RngState& rng,
                        double scale = 1.0) {
  return Parameter<double>(name, Tensor<double>::randn(std::move(shape), rng, scale));
}
}  // namespace

TEST_CASE("finite differences: matmul chain") {
  RngState rng(1);
  auto a = randp("a", {3, 4}, rng);
  auto b = randp("b", {4, 5}, rng);
  auto build = [&](Tape<double>& t) { return t.sum(t.matmul(t.param(a), t.param(b))); };
  REQUIRE(fd::max_rel_err({&a, &b}, build) < kTol);
}

TEST_CASE("finite differences: matmul_nt") {
  RngState rng(2);
  auto a = randp("a", {3, 6}, rng);
  auto b = randp("b", {4, 6}, rng);
  auto build = [&](Tape<double>& t) {
    auto c = t.matmul_nt(t.param(a), t.param(b));
    return t.sum(t.mul(c, c));
  };
  REQUIRE(fd::max_rel_err({&a, &b}, build) < kTol);
}

TEST_CASE("finite differences: linear with bias") {
  RngState rng(3);
  auto x = randp("x", {5, 4}, rng);
  auto w = randp("w", {3, 4}, rng);
  auto b = randp("b", {3}, rng);
  auto build = [&](Tape<double>& t) {
    return t.sum(t.relu(t.linear(t.param(x), t.param(w), t.param(b))));
  };
  REQUIRE(fd::max_rel_err({&x, &w, &b}, build) < kTol);
}

TEST_CASE("finite differences: elementwise ops") {
  RngState rng(4);
  auto a = randp("a", {2, 5}, rng, 0.5);
  auto b = randp("b", {2, 5}, rng, 0.5);
  auto build = [&](Tape<double>& t) {
    auto an = t.param(a);
    auto bn = t.param(b);
    auto mixed = t.mul(t.add(an, bn), t.sub(an, t.scale(bn, 0.3)));
    auto sq = t.exp(t.scale(t.sigmoid(mixed), 0.7));
    return t.mean(t.min_elem(sq, t.add_const(t.relu(an), 0.5)));
  };
  REQUIRE(fd::max_rel_err({&a, &b}, build) < kTol);
}

TEST_CASE("finite differences: log and clamp interior") {
  RngState rng(5);
  Parameter<double> a("a", Tensor<double>({4}, {0.2, 0.5, 0.8, 0.4}));
  auto build = [&](Tape<double>& t) {
    return t.sum(t.log(t.clamp(t.param(a), 1e-6, 1.0 - 1e-6)));
  };
  REQUIRE(fd::max_rel_err({&a}, build) < kTol);
  (void)rng;
}

TEST_CASE("finite differences: rmsnorm") {
  RngState rng(6);
  auto x = randp("x", {3, 8}, rng);
  auto g = randp("g", {8}, rng, 0.3);
  auto build = [&](Tape<double>& t) {
    auto y = t.rmsnorm(t.param(x), t.param(g));
    return t.sum(t.mul(y, y));
  };
  REQUIRE(fd::max_rel_err({&x, &g}, build) < kTol);
}

TEST_CASE("finite differences: embedding and gather_rows") {
  RngState rng(7);
  auto table = randp("table", {6, 4}, rng);
  auto build = [&](Tape<double>& t) {
    auto e = t.embedding(t.param(table), {0, 3, 3, 5});
    auto picked = t.gather_rows(e, {1, 2});
    return t.sum(t.mul(picked, picked));
  };
  REQUIRE(fd::max_rel_err({&table}, build) < kTol);
}

TEST_CASE("finite differences: slice and concat columns") {
  RngState rng(8);
  auto x = randp("x", {3, 6}, rng);
  auto build = [&](Tape<double>& t) {
    auto xn = t.param(x);
    auto left = t.slice_cols(xn, 0, 3);
    auto right = t.slice_cols(xn, 3, 6);
    auto swapped = t.concat_cols({right, left});
    return t.sum(t.mul(swapped, swapped));
  };
  REQUIRE(fd::max_rel_err({&x}, build) < kTol);
}

TEST_CASE("finite differences: causal softmax") {
  RngState rng(9);
  auto s = randp("s", {5, 5}, rng);
  auto v = randp("v", {5, 3}, rng);
  auto build = [&](Tape<double>& t) {
    auto p = t.causal_softmax(t.param(s));
    auto out = t.matmul(p, t.param(v));
    return t.sum(t.mul(out, out));
  };
  REQUIRE(fd::max_rel_err({&s, &v}, build) < kTol);
}

TEST_CASE("finite differences: cross entropy losses") {
  RngState rng(10);
  auto logits = randp("logits", {4, 7}, rng, 2.0);
  auto build_mean = [&](Tape<double>& t) {
    return t.cross_entropy_mean(t.param(logits), {1, 0, 6, 3});
  };
  REQUIRE(fd::max_rel_err({&logits}, build_mean) < kTol);

  auto vec = randp("vec", {7}, rng, 2.0);
  auto build_single = [&](Tape<double>& t) { return t.softmax_cross_entropy(t.param(vec), 4); };
  REQUIRE(fd::max_rel_err({&vec}, build_single) < kTol);
}

TEST_CASE("finite differences: gather_log_softmax") {
  RngState rng(11);
  auto logits = randp("logits", {4, 6}, rng, 2.0);
  auto build = [&](Tape<double>& t) {
    auto lp = t.gather_log_softmax(t.param(logits), {2, 2, 0, 5});
    return t.sum(t.exp(lp));
  };
  REQUIRE(fd::max_rel_err({&logits}, build) < kTol);
}

TEST_CASE("finite differences: weighted bce with mixed weights") {
  RngState rng(12);
  auto z = randp("z", {6}, rng, 0.8);
  std::vector<double> y{1, 0, 1, 1, 0, 0};
  std::vector<double> w{1, 1, 0, 1, 0, 1};
  auto build = [&](Tape<double>& t) {
    auto s = t.clamp(t.sigmoid(t.param(z)), 1e-6, 1.0 - 1e-6);
    return t.weighted_bce(s, y, w);
  };
  REQUIRE(fd::max_rel_err({&z}, build) < kTol);
}

TEST_CASE("finite differences: random two-layer network") {
  RngState rng(13);
  for (int rep = 0; rep < 5; ++rep) {
    auto x = randp("x", {4, 6}, rng);
    auto w1 = randp("w1", {8, 6}, rng, 0.5);
    auto b1 = randp("b1", {8}, rng, 0.2);
    auto w2 = randp("w2", {1, 8}, rng, 0.5);
    auto b2 = randp("b2", {1}, rng, 0.2);
    auto build = [&](Tape<double>& t) {
      auto h = t.relu(t.linear(t.param(x), t.param(w1), t.param(b1)));
      auto out = t.linear(h, t.param(w2), t.param(b2));
      return t.mean(t.mul(out, out));
    };
    REQUIRE(fd::max_rel_err({&x, &w1, &b1, &w2, &b2}, build) < kTol);
  }
}

TEST_CASE("finite differences: dropout with frozen mask") {
  // The mask must be identical across oracle re-evaluations, so the builder
  // re-seeds its own stream every call.
  RngState rng(14);
  auto x = randp("x", {4, 5}, rng);
  auto build = [&](Tape<double>& t) {
    RngState mask_rng(999);
    auto d = t.dropout(t.param(x), 0.4, mask_rng, true);
    return t.sum(t.mul(d, d));
  };
  REQUIRE(fd::max_rel_err({&x}, build) < kTol);
}
