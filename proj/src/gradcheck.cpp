#include "snpforge/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>

namespace snpforge {

namespace {

using Fwd = std::function<Tensord(const std::vector<Tensord>&)>;

struct GradCase {
    std::vector<Shape> default_shapes;
    // Builds the forward closure for the given shapes; constants (targets,
    // noise, indices) are drawn once from rng and baked in.
    std::function<Fwd(const std::vector<Shape>&, Rng&)> make;
    // Optional adjustment of the sampled inputs (positivity, kink avoidance).
    std::function<void(std::vector<Tensord>&)> prep;
};

void make_positive(std::vector<Tensord>& inputs) {
    for (auto& t : inputs)
        for (auto& v : t.data()) v = std::abs(v) + 0.5;
}

void avoid_kink(std::vector<Tensord>& inputs) {
    for (auto& t : inputs)
        for (auto& v : t.data())
            if (std::abs(v) < 0.05) v += v >= 0 ? 0.1 : -0.1;
}

const std::map<std::string, GradCase>& registry() {
    static const std::map<std::string, GradCase> cases = [] {
        std::map<std::string, GradCase> r;
        auto simple = [](std::vector<Shape> shapes, Fwd fn) {
            GradCase c;
            c.default_shapes = std::move(shapes);
            c.make = [fn](const std::vector<Shape>&, Rng&) { return fn; };
            return c;
        };
        r["identity"] = simple({{2, 3}}, [](const std::vector<Tensord>& in) {
            return reshape(in[0], in[0].shape());
        });
        r["add"] = simple({{2, 3, 4}, {2, 3, 4}},
                          [](const std::vector<Tensord>& in) { return add(in[0], in[1]); });
        r["add_broadcast"] = simple({{2, 3, 4}, {3, 1}},
                                    [](const std::vector<Tensord>& in) { return add(in[0], in[1]); });
        r["sub"] = simple({{3, 4}, {3, 4}},
                          [](const std::vector<Tensord>& in) { return sub(in[0], in[1]); });
        r["mul"] = simple({{2, 3, 4}, {2, 3, 4}},
                          [](const std::vector<Tensord>& in) { return mul(in[0], in[1]); });
        r["mul_broadcast"] = simple({{2, 3, 4}, {1, 3, 1}},
                                    [](const std::vector<Tensord>& in) { return mul(in[0], in[1]); });
        r["scale"] = simple({{3, 5}},
                            [](const std::vector<Tensord>& in) { return scale(in[0], 1.7); });
        r["add_scalar"] = simple({{3, 5}}, [](const std::vector<Tensord>& in) {
            return add_scalar(in[0], -0.3);
        });
        r["exp"] = simple({{3, 4}}, [](const std::vector<Tensord>& in) { return exp(in[0]); });
        {
            GradCase c = simple({{3, 4}}, [](const std::vector<Tensord>& in) { return log(in[0]); });
            c.prep = make_positive;
            r["log"] = c;
        }
        {
            GradCase c =
                simple({{3, 4}}, [](const std::vector<Tensord>& in) { return pow(in[0], 2.5); });
            c.prep = make_positive;
            r["pow"] = c;
        }
        r["sigmoid"] = simple({{2, 8}}, [](const std::vector<Tensord>& in) { return sigmoid(in[0]); });
        r["silu"] = simple({{2, 8}}, [](const std::vector<Tensord>& in) { return silu(in[0]); });
        {
            GradCase c = simple({{2, 8}}, [](const std::vector<Tensord>& in) { return relu(in[0]); });
            c.prep = avoid_kink;
            r["relu"] = c;
        }
        {
            GradCase c = simple({{2, 8}}, [](const std::vector<Tensord>& in) {
                return leaky_relu(in[0], 0.2);
            });
            c.prep = avoid_kink;
            r["leaky_relu"] = c;
        }
        {
            GradCase c = simple({{2, 8}}, [](const std::vector<Tensord>& in) {
                return clamp(in[0], -0.8, 0.9);
            });
            // keep samples away from the clamp boundaries
            c.prep = [](std::vector<Tensord>& inputs) {
                for (auto& t : inputs)
                    for (auto& v : t.data()) {
                        if (std::abs(v - -0.8) < 0.05) v += 0.1;
                        if (std::abs(v - 0.9) < 0.05) v += 0.1;
                    }
            };
            r["clamp"] = c;
        }
        r["softmax"] = simple({{2, 5}},
                              [](const std::vector<Tensord>& in) { return softmax(in[0], -1); });
        r["softmax_axis1"] = simple({{2, 3, 4}},
                                    [](const std::vector<Tensord>& in) { return softmax(in[0], 1); });
        r["matmul"] = simple({{3, 4}, {4, 5}},
                             [](const std::vector<Tensord>& in) { return matmul(in[0], in[1]); });
        r["matmul_batched"] = simple({{2, 3, 4}, {2, 4, 5}}, [](const std::vector<Tensord>& in) {
            return matmul(in[0], in[1]);
        });
        r["linear"] = simple({{3, 6}, {4, 6}, {4}}, [](const std::vector<Tensord>& in) {
            return linear(in[0], in[1], in[2]);
        });
        r["conv1d"] = simple({{2, 3, 8}, {4, 3, 3}, {4}}, [](const std::vector<Tensord>& in) {
            return conv1d(in[0], in[1], in[2], 1, 1);
        });
        r["conv1d_stride2"] = simple({{2, 3, 8}, {4, 3, 3}, {4}}, [](const std::vector<Tensord>& in) {
            return conv1d(in[0], in[1], in[2], 2, 1);
        });
        r["conv1d_nopad"] = simple({{2, 3, 8}, {4, 3, 3}, {4}}, [](const std::vector<Tensord>& in) {
            return conv1d(in[0], in[1], in[2], 1, 0);
        });
        r["conv_transpose1d"] =
            simple({{2, 3, 4}, {3, 2, 4}, {2}}, [](const std::vector<Tensord>& in) {
                return conv_transpose1d(in[0], in[1], in[2], 2, 1);
            });
        r["sum"] = simple({{2, 3}}, [](const std::vector<Tensord>& in) { return sum_all(in[0]); });
        r["mean"] = simple({{2, 3}}, [](const std::vector<Tensord>& in) { return mean_all(in[0]); });
        r["sum_axis"] = simple({{2, 3, 4}}, [](const std::vector<Tensord>& in) {
            return sum_axis(in[0], 1, false);
        });
        r["mean_axis"] = simple({{2, 3, 4}}, [](const std::vector<Tensord>& in) {
            return mean_axis(in[0], 1, true);
        });
        {
            GradCase c;
            c.default_shapes = {{2, 6}};
            c.make = [](const std::vector<Shape>& shapes, Rng&) -> Fwd {
                Shape target = shapes[0];
                std::reverse(target.begin(), target.end());
                return [target](const std::vector<Tensord>& in) { return reshape(in[0], target); };
            };
            r["reshape"] = c;
        }
        r["permute"] = simple({{2, 3, 4}}, [](const std::vector<Tensord>& in) {
            return permute(in[0], {2, 0, 1});
        });
        r["slice"] = simple({{2, 5, 4}}, [](const std::vector<Tensord>& in) {
            return slice(in[0], 1, 1, 3);
        });
        r["concat"] = simple({{2, 3}, {2, 4}}, [](const std::vector<Tensord>& in) {
            return concat<double>({in[0], in[1]}, 1);
        });
        {
            GradCase c;
            c.default_shapes = {{4, 3, 5}};
            c.make = [](const std::vector<Shape>& shapes, Rng& rng) -> Fwd {
                const int64_t b = shapes[0][0];
                const int64_t cls = shapes[0][1];
                const int64_t l = shapes[0].size() == 3 ? shapes[0][2] : 1;
                std::vector<int64_t> targets(static_cast<size_t>(b * l));
                for (auto& t : targets) t = static_cast<int64_t>(rng.below(static_cast<uint64_t>(cls)));
                return [targets](const std::vector<Tensord>& in) {
                    return cross_entropy_logits(in[0], targets);
                };
            };
            r["cross_entropy"] = c;
        }
        {
            GradCase c;
            c.default_shapes = {{5, 4}};
            c.make = [](const std::vector<Shape>& shapes, Rng& rng) -> Fwd {
                const int64_t v = shapes[0][0];
                std::vector<int64_t> idx(6);
                for (auto& i : idx) i = static_cast<int64_t>(rng.below(static_cast<uint64_t>(v)));
                return [idx](const std::vector<Tensord>& in) { return embedding(in[0], idx); };
            };
            r["embedding"] = c;
        }
        {
            GradCase c;
            c.default_shapes = {{2, 8, 16}, {8}, {8}};
            c.make = [](const std::vector<Shape>& shapes, Rng&) -> Fwd {
                const int64_t ch = shapes[0][1];
                const int groups = ch % 4 == 0 ? 4 : 1;
                return [groups](const std::vector<Tensord>& in) {
                    return group_norm(in[0], groups, in[1], in[2]);
                };
            };
            r["group_norm"] = c;
        }
        r["instance_norm"] = simple({{2, 4, 6}, {4}, {4}}, [](const std::vector<Tensord>& in) {
            return instance_norm(in[0], in[1], in[2]);
        });
        r["layer_norm"] = simple({{2, 3, 6}, {6}, {6}}, [](const std::vector<Tensord>& in) {
            return layer_norm(in[0], in[1], in[2]);
        });
        r["attention"] = simple({{2, 4, 8}, {2, 4, 8}, {2, 4, 8}},
                                [](const std::vector<Tensord>& in) {
                                    return attention(in[0], in[1], in[2]);
                                });
        {
            GradCase c;
            c.default_shapes = {{2, 6}, {2, 6}};
            c.make = [](const std::vector<Shape>& shapes, Rng& rng) -> Fwd {
                Tensord noise = Tensord::randn(shapes[0], rng);
                return [noise](const std::vector<Tensord>& in) {
                    return reparameterize(in[0], in[1], noise);
                };
            };
            r["reparameterize"] = c;
        }
        return r;
    }();
    return cases;
}

} // namespace

std::vector<std::string> grad_check_ops() {
    std::vector<std::string> names;
    for (const auto& [name, _] : registry()) names.push_back(name);
    return names;
}

double grad_check(const std::string& op_spec, uint64_t seed) {
    return grad_check(op_spec, {}, seed);
}

double grad_check(const std::string& op_spec, const std::vector<Shape>& input_shapes,
                  uint64_t seed) {
    const auto it = registry().find(op_spec);
    if (it == registry().end())
        throw std::invalid_argument("grad_check: unsupported op '" + op_spec + "'");
    const GradCase& c = it->second;
    const std::vector<Shape>& shapes = input_shapes.empty() ? c.default_shapes : input_shapes;
    if (shapes.size() != c.default_shapes.size())
        throw std::invalid_argument("grad_check: op '" + op_spec + "' expects " +
                                    std::to_string(c.default_shapes.size()) + " inputs");

    Rng rng(seed);
    std::vector<Tensord> inputs;
    inputs.reserve(shapes.size());
    for (const auto& s : shapes) inputs.push_back(Tensord::randn(s, rng));
    if (c.prep) c.prep(inputs);
    Rng const_rng = rng.fork(1);
    const Fwd fn = c.make(shapes, const_rng);

    // Scalarize through a fixed random projection so every output entry
    // contributes to the loss.
    Tensord probe = fn(inputs);
    Rng wrng = rng.fork(2);
    const Tensord weights = Tensord::randn(probe.shape(), wrng);
    auto loss_value = [&]() {
        const Tensord out = fn(inputs);
        double acc = 0;
        const auto& od = out.data();
        const auto& wd = weights.data();
        for (size_t i = 0; i < od.size(); ++i) acc += od[i] * wd[i];
        return acc;
    };

    for (auto& in : inputs) in.set_requires_grad(true);
    std::vector<std::vector<double>> analytic;
    {
        Taped tape;
        Tensord out = fn(inputs);
        Tensord loss = sum_all(mul(out, weights));
        tape.backward(loss);
        for (auto& in : inputs) {
            analytic.push_back(in.has_grad() ? in.impl()->grad
                                             : std::vector<double>(in.data().size(), 0.0));
            in.zero_grad();
        }
    }
    for (auto& in : inputs) in.set_requires_grad(false);

    const double h = 1e-5;
    double max_rel = 0;
    for (size_t t = 0; t < inputs.size(); ++t) {
        auto& data = inputs[t].data();
        for (size_t i = 0; i < data.size(); ++i) {
            const double orig = data[i];
            data[i] = orig + h;
            const double fp = loss_value();
            data[i] = orig - h;
            const double fm = loss_value();
            data[i] = orig;
            const double numeric = (fp - fm) / (2 * h);
            const double rel =
                std::abs(analytic[t][i] - numeric) / std::max(std::abs(numeric), 1e-8);
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

} // namespace snpforge
