#include <doctest.h>

#include "mdseg/grad_check.hpp"
#include "mdseg/losses.hpp"
#include "mdseg/rng.hpp"

using namespace mdseg;
using G = Graph<double>;

namespace {

// random logits -> softmax probs tensor (rank 4), plus a random one-hot target
struct Fixture {
  Tensor<double> probs, target;
};

Fixture random_fixture(std::size_t n, std::size_t c, std::size_t hw_side,
                       std::uint64_t seed) {
  Rng rng(seed);
  G g(false);
  Tensor<double> logits(Shape{n, c, hw_side, hw_side});
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = rng.uniform(-2, 2);
  auto p = g.softmax_channel(g.constant(std::move(logits)));

  Tensor<std::uint8_t> labels(Shape{n, hw_side, hw_side});
  for (std::size_t i = 0; i < labels.size(); ++i)
    labels[i] = std::uint8_t(rng.uniform_int(0, std::int64_t(c) - 1));
  return {g.value(p), one_hot<double>(labels, c)};
}

double value_of(G::Value v, G& g) { return g.value(v)[0]; }

}  // namespace

TEST_CASE("argmax_channel breaks ties toward the smallest class") {
  Tensor<float> p(Shape{1, 3, 1, 2});
  // pixel 0: classes {0.4, 0.4, 0.2} -> 0 ; pixel 1: {0.1, 0.3, 0.6} -> 2
  p.at(0, 0, 0, 0) = 0.4f; p.at(0, 1, 0, 0) = 0.4f; p.at(0, 2, 0, 0) = 0.2f;
  p.at(0, 0, 0, 1) = 0.1f; p.at(0, 1, 0, 1) = 0.3f; p.at(0, 2, 0, 1) = 0.6f;
  auto l = argmax_channel(p);
  CHECK(l[0] == 0);
  CHECK(l[1] == 2);
}

TEST_CASE("one_hot round-trips argmax and rejects bad labels") {
  Tensor<std::uint8_t> labels(Shape{2, 2, 2},
                              std::vector<std::uint8_t>{0, 1, 2, 1, 2, 0, 0, 1});
  auto oh = one_hot<float>(labels, 3);
  CHECK(argmax_channel(oh) == labels);
  Tensor<std::uint8_t> bad(Shape{1, 1, 1}, std::vector<std::uint8_t>{5});
  CHECK_THROWS_AS(one_hot<float>(bad, 3), ContractViolation);
}

TEST_CASE("dice: perfect prediction scores zero, disjoint scores about one") {
  G g(false);
  Tensor<std::uint8_t> labels(Shape{1, 4, 4});
  for (std::size_t i = 0; i < 8; ++i) labels[i] = 1;
  auto t = one_hot<double>(labels, 2);
  CHECK(value_of(dice_loss(g, g.constant(t), t), g) ==
        doctest::Approx(0.0).epsilon(1e-12));

  // prediction puts everything in the wrong class
  Tensor<std::uint8_t> flipped(Shape{1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) flipped[i] = 1 - labels[i];
  auto p = one_hot<double>(flipped, 2);
  CHECK(value_of(dice_loss(g, g.constant(p), t), g) ==
        doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("dice: uniform halves vs balanced one-hot gives exactly 1/3") {
  G g(false);
  Tensor<double> p(Shape{1, 2, 4, 4}, 0.5);
  Tensor<std::uint8_t> labels(Shape{1, 4, 4});
  for (std::size_t i = 0; i < 8; ++i) labels[i] = 1;  // balanced classes
  auto t = one_hot<double>(labels, 2);
  CHECK(value_of(dice_loss(g, g.constant(p), t), g) ==
        doctest::Approx(1.0 / 3.0).epsilon(1e-4));
}

TEST_CASE("ce: uniform over two classes is ln 2; 0.75 confidence is -ln 0.75") {
  G g(false);
  Tensor<double> uni(Shape{2, 2, 3, 3}, 0.5);
  Fixture f = random_fixture(2, 2, 3, 5);
  CHECK(value_of(ce_loss(g, g.constant(uni), f.target), g) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Tensor<double> conf(Shape{2, 2, 3, 3});
  for (std::size_t i = 0; i < conf.size(); ++i)
    conf[i] = f.target[i] == 1.0 ? 0.75 : 0.25;
  CHECK(value_of(ce_loss(g, g.constant(conf), f.target), g) ==
        doctest::Approx(-std::log(0.75)).epsilon(1e-12));
}

TEST_CASE("ce: epsilon floor keeps zero probabilities finite") {
  G g(false);
  Tensor<std::uint8_t> labels(Shape{1, 2, 2}, std::vector<std::uint8_t>{0, 1, 1, 0});
  auto t = one_hot<double>(labels, 2);
  Tensor<double> wrong(Shape{1, 2, 2, 2});
  for (std::size_t i = 0; i < wrong.size(); ++i) wrong[i] = 1.0 - t[i];  // p=0 on truth
  const double v = value_of(ce_loss(g, g.constant(wrong), t), g);
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(-std::log(1e-7)).epsilon(1e-9));
}

TEST_CASE("sup loss: uniform prediction on balanced target is 1/3 + ln 2") {
  G g(false);
  Tensor<double> p(Shape{1, 2, 4, 4}, 0.5);
  Tensor<std::uint8_t> labels(Shape{1, 4, 4});
  for (std::size_t i = 0; i < 8; ++i) labels[i] = 1;
  auto t = one_hot<double>(labels, 2);
  CHECK(value_of(sup_loss(g, g.constant(p), t), g) ==
        doctest::Approx(1.0 / 3.0 + std::log(2.0)).epsilon(1e-4));
}

TEST_CASE("sup loss: corrupting labels never helps a correct prediction") {
  Rng rng(17);
  Tensor<std::uint8_t> labels(Shape{1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i)
    labels[i] = std::uint8_t(rng.uniform_int(0, 1));
  auto t = one_hot<double>(labels, 2);
  G g0(false);
  const double base = value_of(sup_loss(g0, g0.constant(t), t), g0);
  for (int trial = 0; trial < 30; ++trial) {
    Tensor<std::uint8_t> corrupted = labels;
    for (std::size_t i = 0; i < 16; ++i)
      if (rng.bernoulli(0.3)) corrupted[i] = std::uint8_t(1 - corrupted[i]);
    G g(false);
    const double v =
        value_of(sup_loss(g, g.constant(t), one_hot<double>(corrupted, 2)), g);
    CHECK(v >= base - 1e-12);
  }
}

TEST_CASE("dice and ce gradients match central differences") {
  Fixture f = random_fixture(1, 3, 3, 21);
  const std::vector<double> point(f.probs.data(), f.probs.data() + f.probs.size());
  const Shape s = f.probs.shape();

  auto make = [&](auto loss_fn) {
    auto fval = [&, loss_fn](const std::vector<double>& p) {
      G g(false);
      auto pv = g.leaf(Tensor<double>(s, std::vector<double>(p)), false);
      return value_of(loss_fn(g, pv), g);
    };
    G g(true);
    auto pv = g.leaf(Tensor<double>(s, std::vector<double>(point)), true);
    auto grads = g.backward(loss_fn(g, pv));
    const auto& an = grads.at(pv.id);
    return grad_check(fval, point,
                      std::vector<double>(an.data(), an.data() + an.size()), 1e-6);
  };

  CHECK(make([&](G& g, G::Value p) { return dice_loss(g, p, f.target); }) < 1e-5);
  CHECK(make([&](G& g, G::Value p) { return ce_loss(g, p, f.target); }) < 1e-5);
  CHECK(make([&](G& g, G::Value p) { return sup_loss(g, p, f.target); }) < 1e-5);
}

TEST_CASE("consistency: agreement scores zero, l_cpm = l_in + l_out") {
  Fixture fin = random_fixture(1, 2, 4, 31);
  Fixture fout = random_fixture(1, 2, 4, 32);
  // student equals the hardened teacher -> all three losses vanish
  auto hard_in = one_hot<double>(argmax_channel(fin.probs), 2);
  auto hard_out = one_hot<double>(argmax_channel(fout.probs), 2);
  G g(false);
  auto cons = consistency_losses(g, g.constant(hard_in), g.constant(hard_out),
                                 fin.probs, fout.probs);
  CHECK(value_of(cons.l_in, g) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(value_of(cons.l_out, g) == doctest::Approx(0.0).epsilon(1e-6));

  // identity holds for arbitrary student probabilities
  Fixture s1 = random_fixture(1, 2, 4, 33);
  Fixture s2 = random_fixture(1, 2, 4, 34);
  G g2(false);
  auto c2 = consistency_losses(g2, g2.constant(s1.probs), g2.constant(s2.probs),
                               fin.probs, fout.probs);
  CHECK(value_of(c2.l_cpm, g2) ==
        doctest::Approx(value_of(c2.l_in, g2) + value_of(c2.l_out, g2))
            .epsilon(1e-12));
}

TEST_CASE("consistency: perturbing an agreeing student pixel raises the loss") {
  Fixture fin = random_fixture(1, 2, 3, 41);
  auto hard = one_hot<double>(argmax_channel(fin.probs), 2);
  Tensor<double> perturbed = hard;
  // move 0.2 of mass to the wrong class at one pixel
  const std::size_t hw = 9;
  for (std::size_t c = 0; c < 2; ++c) {
    double& v = perturbed[c * hw + 4];
    v = v == 1.0 ? 0.8 : 0.2;
  }
  G g(false);
  auto base = consistency_losses(g, g.constant(hard), g.constant(hard), fin.probs,
                                 fin.probs);
  auto moved = consistency_losses(g, g.constant(perturbed), g.constant(hard),
                                  fin.probs, fin.probs);
  CHECK(value_of(moved.l_in, g) > value_of(base.l_in, g));
  CHECK(value_of(moved.l_cpm, g) > value_of(base.l_cpm, g));
}

TEST_CASE("consistency: teacher enters only through its argmax") {
  Fixture fin = random_fixture(1, 2, 4, 51);
  Fixture fout = random_fixture(1, 2, 4, 52);
  Fixture st1 = random_fixture(1, 2, 4, 53);
  Fixture st2 = random_fixture(1, 2, 4, 54);

  // nudge teacher probabilities without flipping any argmax
  Tensor<double> nudged = fin.probs;
  for (std::size_t i = 0; i < nudged.size(); ++i)
    nudged[i] = 0.99 * nudged[i] + 0.005;

  G g1(true), g2(true);
  auto s1 = g1.leaf(st1.probs, true), o1 = g1.leaf(st2.probs, true);
  auto s2 = g2.leaf(st1.probs, true), o2 = g2.leaf(st2.probs, true);
  auto a = consistency_losses(g1, s1, o1, fin.probs, fout.probs);
  auto b = consistency_losses(g2, s2, o2, nudged, fout.probs);
  CHECK(g1.value(a.l_cpm)[0] == g2.value(b.l_cpm)[0]);  // bitwise equal

  // gradient reaches the student leaves and nothing else requires grad
  auto grads = g1.backward(a.l_cpm);
  CHECK(grads.count(s1.id) == 1);
  CHECK(grads.count(o1.id) == 1);
  CHECK(grads.size() == 2);
}

TEST_CASE("ramp weight endpoints, midpoint, monotonicity, range check") {
  CHECK(ramp_weight({3000, 0}) == doctest::Approx(std::exp(-5.0)).epsilon(1e-12));
  CHECK(ramp_weight({3000, 1500}) ==
        doctest::Approx(std::exp(-2.5)).epsilon(1e-12));
  CHECK(ramp_weight({3000, 3000}) == doctest::Approx(1.0).epsilon(1e-12));
  double prev = 0;
  for (long it = 0; it <= 100; ++it) {
    const double w = ramp_weight({100, it});
    CHECK(w >= prev);
    prev = w;
  }
  CHECK_THROWS_AS(ramp_weight({100, 101}), ContractViolation);
  CHECK_THROWS_AS(ramp_weight({100, -1}), ContractViolation);
  CHECK_THROWS_AS(ramp_weight({0, 0}), ContractViolation);
}

TEST_CASE("total loss identity and divergence signalling") {
  CHECK(total_loss(1.5, 0.5, 0.25, 0.1) == doctest::Approx(1.5 + 0.1 * 0.75));
  CHECK_THROWS_AS(
      total_loss(std::numeric_limits<double>::quiet_NaN(), 0, 0, 1),
      NumericsError);
  CHECK_THROWS_AS(total_loss(0, std::numeric_limits<double>::infinity(), 0, 1),
                  NumericsError);
}
