#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradcheck.hpp"
#include "skyramp/optimizer.hpp"
#include "skyramp/phydnet.hpp"

using namespace skyramp;
using namespace skyramp::num;
using namespace skyramp::phy;

namespace {

void fill_zero(Tensor<double>& t) { t.data().assign(t.size(), 0.0); }

PhyDNetConfig tiny_cfg() {
    PhyDNetConfig cfg;
    cfg.in_channels = 2;
    cfg.out_channels = 1;
    cfg.enc_mid = 4;
    cfg.latent = 3;
    cfg.q = 2;
    cfg.kernel_size = 3;
    return cfg;
}

} // namespace

TEST_CASE("derivative basis satisfies the moment conditions") {
    for (int k : {3, 5}) {
        auto basis = build_derivative_basis<double>(2, k);
        auto orders = derivative_orders(2);
        REQUIRE(basis.dim(0) == orders.size());
        const int half = k / 2;
        auto fact = [](int v) { return v <= 1 ? 1.0 : (v == 2 ? 2.0 : 6.0); };
        for (std::size_t oi = 0; oi < orders.size(); ++oi)
            for (int a = 0; a <= 2; ++a)
                for (int b = 0; a + b <= 2; ++b) {
                    double m = 0.0;
                    for (int r = 0; r < k; ++r)
                        for (int c = 0; c < k; ++c) {
                            double dx = c - half, dy = r - half;
                            m += basis.data()[oi * k * k + r * k + c] * std::pow(dx, a) *
                                 std::pow(dy, b) / (fact(a) * fact(b));
                        }
                    double want = (orders[oi] == std::make_pair(a, b)) ? 1.0 : 0.0;
                    CHECK(m == doctest::Approx(want).epsilon(1e-9));
                }
    }
}

TEST_CASE("derivative basis is exact on quadratic fields") {
    // f(x,y) = 3x^2 + 2xy - y^2 + 4x - 5y + 7, x along columns
    const std::size_t n = 12;
    std::vector<double> field(n * n);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) {
            double x = double(c), y = double(r);
            field[r * n + c] = 3 * x * x + 2 * x * y - y * y + 4 * x - 5 * y + 7;
        }
    Tensor<double> h({1, 1, n, n}, field);

    for (int k : {3, 5}) {
        auto basis = build_derivative_basis<double>(2, k);
        NoGradGuard ng;
        auto resp = conv2d(h, basis); // valid region only
        const std::size_t m = n - k + 1;
        const int half = k / 2;
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < m; ++c) {
                double x = double(c) + half, y = double(r) + half;
                double want[5] = {6 * x + 2 * y + 4, 2 * x - 2 * y - 5, 6, 2, -2};
                for (std::size_t d = 0; d < 5; ++d)
                    CHECK(resp.data()[(d * m + r) * m + c] ==
                          doctest::Approx(want[d]).epsilon(1e-6));
            }
    }
}

TEST_CASE("derivative basis rejects infeasible kernel sizes") {
    CHECK_THROWS(build_derivative_basis<double>(2, 1));
    CHECK_THROWS(build_derivative_basis<double>(2, 4));
    CHECK_THROWS(build_derivative_basis<double>(0, 3));
}

TEST_CASE("physics step: zero combination and constant fields are identities") {
    Rng rng(1);
    ParamStore<double> ps;
    PhyDNet<double> net(tiny_cfg(), ps, rng);

    Tensor<double> h = Tensor<double>::randn({1, 3, 6, 6}, rng);
    fill_zero(ps.at("phydnet.phy.comb_w"));
    fill_zero(ps.at("phydnet.phy.comb_b"));
    NoGradGuard ng;
    auto out = net.phycell_predict(h);
    for (std::size_t i = 0; i < h.size(); ++i) CHECK(out.data()[i] == h.data()[i]);

    // random combination, constant field: derivatives vanish away from the border
    ParamStore<double> ps2;
    Rng rng2(2);
    PhyDNet<double> net2(tiny_cfg(), ps2, rng2);
    Tensor<double> flat({1, 3, 6, 6}, 0.37);
    auto out2 = net2.phycell_predict(flat);
    double bias = 0.0;
    for (std::size_t ch = 0; ch < 3; ++ch) {
        bias = ps2.at("phydnet.phy.comb_b").data()[ch];
        for (std::size_t r = 1; r < 5; ++r)
            for (std::size_t c = 1; c < 5; ++c)
                CHECK(out2.data()[(ch * 6 + r) * 6 + c] ==
                      doctest::Approx(0.37 + bias).epsilon(1e-9));
    }
}

TEST_CASE("physics step matches a term-by-term scalar reference") {
    Rng rng(3);
    ParamStore<double> ps;
    auto cfg = tiny_cfg();
    PhyDNet<double> net(cfg, ps, rng);
    const std::size_t C = 3, n = 6, nk = 5;
    const int k = 3, half = 1;
    Tensor<double> h = Tensor<double>::randn({1, C, n, n}, rng);
    auto basis = net.basis();
    const auto& w = ps.at("phydnet.phy.comb_w").data(); // (C, C*nk, 1, 1)
    const auto& b = ps.at("phydnet.phy.comb_b").data();

    NoGradGuard ng;
    auto got = net.phi(h);

    for (std::size_t oc = 0; oc < C; ++oc)
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < n; ++c) {
                double acc = b[oc];
                for (std::size_t ic = 0; ic < C; ++ic)
                    for (std::size_t d = 0; d < nk; ++d) {
                        double resp = 0.0;
                        for (int kr = 0; kr < k; ++kr)
                            for (int kc = 0; kc < k; ++kc) {
                                int rr = int(r) + kr - half, cc = int(c) + kc - half;
                                if (rr < 0 || cc < 0 || rr >= int(n) || cc >= int(n)) continue;
                                resp += basis.data()[(d * k + kr) * k + kc] *
                                        h.data()[(ic * n + rr) * n + cc];
                            }
                        acc += w[oc * C * nk + ic * nk + d] * resp;
                    }
                CHECK(got.data()[(oc * n + r) * n + c] == doctest::Approx(acc).epsilon(1e-9));
            }
}

TEST_CASE("correction gate: pinned limits and elementwise blending") {
    Rng rng(4);
    ParamStore<double> ps;
    PhyDNet<double> net(tiny_cfg(), ps, rng);
    Tensor<double> ht = Tensor<double>::randn({1, 3, 4, 4}, rng);
    Tensor<double> enc = Tensor<double>::randn({1, 3, 4, 4}, rng);
    NoGradGuard ng;

    fill_zero(ps.at("phydnet.phy.gate_wh"));
    fill_zero(ps.at("phydnet.phy.gate_wu"));
    fill_zero(ps.at("phydnet.phy.gate_b"));
    auto [h0, k0] = net.phycell_correct(ht, enc);
    for (std::size_t i = 0; i < ht.size(); ++i) {
        CHECK(k0.data()[i] == 0.0);
        CHECK(h0.data()[i] == ht.data()[i]);
    }

    ps.at("phydnet.phy.gate_b").data().assign(3, 20.0);
    auto [h1, k1] = net.phycell_correct(ht, enc);
    for (std::size_t i = 0; i < ht.size(); ++i)
        CHECK(h1.data()[i] == doctest::Approx(enc.data()[i]).epsilon(1e-6));

    // random gate: output must equal the blend computed from the returned K
    ParamStore<double> ps2;
    Rng rng2(5);
    PhyDNet<double> net2(tiny_cfg(), ps2, rng2);
    auto [hn, kn] = net2.phycell_correct(ht, enc);
    for (std::size_t i = 0; i < ht.size(); ++i) {
        double want = (1.0 - kn.data()[i]) * ht.data()[i] + kn.data()[i] * enc.data()[i];
        CHECK(hn.data()[i] == doctest::Approx(want).epsilon(1e-12));
    }
    CHECK_THROWS(net2.phycell_correct(ht, Tensor<double>({1, 3, 5, 5})));
}

TEST_CASE("convlstm gate semantics") {
    Rng rng(6);
    ParamStore<double> ps;
    PhyDNet<double> net(tiny_cfg(), ps, rng);
    NoGradGuard ng;
    const std::size_t L = 3;

    fill_zero(ps.at("phydnet.lstm.wx"));
    fill_zero(ps.at("phydnet.lstm.wh"));
    fill_zero(ps.at("phydnet.lstm.b"));
    PhyDNet<double>::LstmState s{Tensor<double>({1, L, 4, 4}), Tensor<double>({1, L, 4, 4})};
    auto x = Tensor<double>::randn({1, L, 4, 4}, rng);
    auto s1 = net.convlstm_step(s, x);
    for (double v : s1.h.data()) CHECK(v == 0.0);
    for (double v : s1.c.data()) CHECK(v == 0.0);

    // forget gate pinned open, input gate pinned shut: cell is preserved
    auto& bias = ps.at("phydnet.lstm.b").data();
    for (std::size_t ch = 0; ch < L; ++ch) bias[ch] = -20.0;          // input gate
    for (std::size_t ch = L; ch < 2 * L; ++ch) bias[ch] = 20.0;       // forget gate
    PhyDNet<double>::LstmState s2{Tensor<double>::randn({1, L, 4, 4}, rng),
                                  Tensor<double>::randn({1, L, 4, 4}, rng)};
    auto s3 = net.convlstm_step(s2, x);
    for (std::size_t i = 0; i < s2.c.size(); ++i)
        CHECK(s3.c.data()[i] == doctest::Approx(s2.c.data()[i]).epsilon(1e-6));

    // tanh output bound under wild weights
    ParamStore<double> ps2;
    Rng rng2(7);
    PhyDNet<double> net2(tiny_cfg(), ps2, rng2);
    for (auto& p : ps2.params())
        for (auto& v : p.value.data()) v *= 50.0;
    auto big = net2.convlstm_step(s2, Tensor<double>::randn({1, L, 4, 4}, rng2, 100.0));
    for (double v : big.h.data()) CHECK(std::abs(v) < 1.0);
}

TEST_CASE("encoder and decoder contracts") {
    Rng rng(8);
    ParamStore<double> ps;
    PhyDNet<double> net(tiny_cfg(), ps, rng);
    NoGradGuard ng;
    auto lat = net.encode(Tensor<double>::randn({2, 2, 16, 16}, rng));
    CHECK(lat.shape() == num::Shape{2, 3, 4, 4});
    auto out = net.decode(Tensor<double>::randn({2, 3, 4, 4}, rng, 5.0));
    CHECK(out.shape() == num::Shape{2, 1, 16, 16});
    for (double v : out.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("forecast: shapes, teacher forcing limits, finiteness") {
    Rng rng(9);
    ParamStore<double> ps;
    PhyDNet<double> net(tiny_cfg(), ps, rng);
    NoGradGuard ng;
    const std::size_t B = 1, S = 4, H = 16;
    auto frames = Tensor<double>::uniform({B, S, 1, H, H}, rng, 0.0, 1.0);
    auto masks = Tensor<double>::uniform({B, S + 7, 1, H, H}, rng, 0.0, 1.0);

    auto one = net.forecast(frames, masks, 1);
    CHECK(one.shape() == num::Shape{B, 1, 1, H, H});
    auto eight = net.forecast(frames, masks, 8);
    CHECK(eight.shape() == num::Shape{B, 8, 1, H, H});
    CHECK(eight.all_finite());
    for (double v : eight.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    auto teacher = Tensor<double>::uniform({B, 8, 1, H, H}, rng, 0.0, 1.0);
    // ratio 1: every recurrent input is the teacher frame, so the rng draw
    // pattern cannot change the output
    Rng ra(100), rb(200);
    auto fa = net.forecast(frames, masks, 8, &teacher, 1.0, &ra);
    auto fb = net.forecast(frames, masks, 8, &teacher, 1.0, &rb);
    CHECK(fa.data() == fb.data());
    // ratio 0: identical to inference without a teacher
    Rng rc(300);
    auto fc = net.forecast(frames, masks, 8, &teacher, 0.0, &rc);
    CHECK(fc.data() == eight.data());

    CHECK_THROWS(net.forecast(frames, masks, 0));
    CHECK_THROWS(net.forecast(frames, masks, 9)); // mask too short
    auto short_teacher = Tensor<double>::uniform({B, 3, 1, H, H}, rng, 0.0, 1.0);
    CHECK_THROWS(net.forecast(frames, masks, 8, &short_teacher, 0.5, &ra));
}

TEST_CASE("frame loss: limits and finite-difference gradient") {
    Rng rng(10);
    auto target = Tensor<double>::uniform({2, 1, 8, 8}, rng, 0.0, 1.0);

    auto same = frame_loss(target, target, 0.5);
    CHECK(same.item() == doctest::Approx(0.0).epsilon(1e-6));

    auto pred = Tensor<double>::uniform({2, 1, 8, 8}, rng, 0.0, 1.0);
    double l1 = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        l1 += std::abs(target.data()[i] - pred.data()[i]);
    l1 /= double(pred.size());
    {
        NoGradGuard ng;
        CHECK(frame_loss(target, pred, 0.0).item() == doctest::Approx(l1).epsilon(1e-12));
    }

    auto rep = gradcheck::check({&pred}, [&] { return frame_loss(target, pred, 0.5); });
    CHECK(rep.max_rel_err < 1e-4);
    CHECK_THROWS(frame_loss(target, Tensor<double>({2, 1, 8, 9}), 0.5));
}

TEST_CASE("short training run reduces the frame loss") {
    Rng rng(11);
    PhyDNetConfig cfg;
    cfg.enc_mid = 8;
    cfg.latent = 8;
    cfg.kernel_size = 5;
    ParamStore<float> ps;
    PhyDNet<float> net(cfg, ps, rng);

    const std::size_t S = 4, Hn = 16, horizon = 4;
    // a blob drifting right: learnable short-range dynamics
    auto blob = [&](double cx, double cy) {
        std::vector<float> img(Hn * Hn);
        for (std::size_t r = 0; r < Hn; ++r)
            for (std::size_t c = 0; c < Hn; ++c) {
                double d2 = (double(r) - cy) * (double(r) - cy) +
                            (double(c) - cx) * (double(c) - cx);
                img[r * Hn + c] = float(std::exp(-d2 / 8.0));
            }
        return img;
    };
    std::vector<float> hist, fut, masks;
    for (std::size_t t = 0; t < S; ++t) {
        auto f = blob(3.0 + t, 8.0);
        hist.insert(hist.end(), f.begin(), f.end());
    }
    for (std::size_t t = 0; t < horizon; ++t) {
        auto f = blob(3.0 + S + t, 8.0);
        fut.insert(fut.end(), f.begin(), f.end());
    }
    masks.assign((S + horizon - 1) * Hn * Hn, 0.f);

    Tensor<float> frames({1, S, 1, Hn, Hn}, hist);
    Tensor<float> teacher({1, horizon, 1, Hn, Hn}, fut);
    Tensor<float> mask_t({1, S + horizon - 1, 1, Hn, Hn}, masks);

    Adam<float> opt(2e-3f);
    double first = 0.0, last = 0.0;
    Rng tf_rng(12);
    for (int step = 0; step < 40; ++step) {
        auto pred = net.forecast(frames, mask_t, horizon, &teacher, 0.5, &tf_rng);
        auto loss = frame_loss(teacher, pred, 0.5f);
        if (step == 0) first = loss.item();
        last = loss.item();
        backward(loss);
        opt.step(ps);
    }
    CHECK(last < 0.7 * first);
}
