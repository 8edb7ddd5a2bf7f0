#include "avvp/grad_check.hpp"

#include <cmath>
#include <random>

#include "avvp/model.hpp"

namespace avvp {

double grad_check(const ScalarFn& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw UsageError("grad_check: step size must be positive");

  Tensor var = x;
  Tape tape;
  Val xv = tape.param(var);
  Val y = f(tape, xv);
  if (tape.value(y).size() != 1) {
    throw UsageError("grad_check: f must be scalar-valued, got shape " +
                     shape_str(tape.value(y).shape));
  }
  tape.backward(y);

  auto eval = [&](const Tensor& at) {
    Tape t;
    Val v = t.input(at);
    return t.scalar(f(t, v));
  };

  double max_err = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe.values[i];
    probe.values[i] = orig + h;
    const double up = eval(probe);
    probe.values[i] = orig - h;
    const double down = eval(probe);
    probe.values[i] = orig;
    const double fd = (up - down) / (2.0 * h);
    const double err = std::abs(var.grad[i] - fd) / (std::abs(fd) + 1e-8);
    max_err = std::max(max_err, err);
  }
  return max_err;
}

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.values) v = u(rng);
  return t;
}

// Keeps samples away from a kink at `kink` so central differences are valid.
Tensor random_tensor_away_from(Shape shape, std::mt19937_64& rng, double kink, double margin) {
  Tensor t = random_tensor(std::move(shape), rng);
  for (double& v : t.values) {
    if (std::abs(v - kink) < margin) v = kink + (v >= kink ? margin : -margin) * 2.0;
  }
  return t;
}

// Weighted scalar readout so the check exercises every output coordinate with
// a distinct sensitivity.
Val readout(Tape& t, Val y, const Tensor& w) { return t.sum_all(t.mul(y, t.input(w))); }

struct SuiteBuilder {
  std::vector<CheckResult>& out;
  double tol, h;
  std::size_t instances;
  std::mt19937_64 rng;

  void primitive(const std::string& name,
                 const std::function<double(std::mt19937_64&)>& one_instance) {
    CheckResult r{name, 0.0, tol, false};
    for (std::size_t i = 0; i < instances; ++i) r.max_err = std::max(r.max_err, one_instance(rng));
    r.pass = r.max_err < tol;
    out.push_back(r);
  }
};

double pipeline_fd_check(PipelineMode mode, double h, std::uint64_t seed) {
  ModelConfig mc;
  mc.d_audio = 3;
  mc.d_visual = 4;
  mc.d_hidden = 6;
  mc.num_classes = 2;
  mc.mode = mode;
  std::mt19937_64 rng(seed);
  const std::size_t N = 4, T = 3;
  VideoBatch batch;
  batch.audio = random_tensor({N, T, mc.d_audio}, rng, -1.0, 1.0);
  batch.visual = random_tensor({N, T, mc.d_visual}, rng, -1.0, 1.0);
  batch.labels = Tensor({N, mc.num_classes});
  std::uniform_int_distribution<int> coin(0, 1);
  for (std::size_t n = 0; n < N; ++n) {
    std::size_t pos = 0;
    for (std::size_t c = 0; c < mc.num_classes; ++c) {
      batch.labels.at2(n, c) = coin(rng);
      pos += batch.labels.at2(n, c) != 0.0;
    }
    if (!pos) batch.labels.at2(n, 0) = 1.0;  // every video carries an event
  }

  AvvpModel model(mc, seed + 1);
  auto eval_loss = [&]() {
    Tape t;
    auto fw = model.forward(t, batch);
    Val loss = mmil_loss(t, fw.p_video, batch.labels);
    if (fw.has_msdu) {
      loss = t.add(loss, t.add(mmil_loss(t, fw.s_ms_a, batch.labels),
                               mmil_loss(t, fw.s_ms_v, batch.labels)));
    }
    return t.scalar(loss);
  };

  // Analytic gradients.
  model.params().zero_grads();
  {
    Tape t;
    auto fw = model.forward(t, batch);
    Val loss = mmil_loss(t, fw.p_video, batch.labels);
    if (fw.has_msdu) {
      loss = t.add(loss, t.add(mmil_loss(t, fw.s_ms_a, batch.labels),
                               mmil_loss(t, fw.s_ms_v, batch.labels)));
    }
    t.backward(loss);
  }

  double max_err = 0.0;
  for (auto& e : model.params().entries()) {
    for (std::size_t i = 0; i < e.tensor.size(); ++i) {
      const double orig = e.tensor.values[i];
      e.tensor.values[i] = orig + h;
      const double up = eval_loss();
      e.tensor.values[i] = orig - h;
      const double down = eval_loss();
      e.tensor.values[i] = orig;
      const double fd = (up - down) / (2.0 * h);
      const double err = std::abs(e.tensor.grad[i] - fd) / (std::abs(fd) + 1e-8);
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

double eq5_identity_check(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t N = 3, C = 4;
  Tensor z = random_tensor({N, C}, rng, -4.0, 4.0);
  Tensor y({N, C});
  std::uniform_int_distribution<int> coin(0, 1);
  for (double& v : y.values) v = coin(rng);

  Tape t;
  Val zv = t.param(z);
  Val p = t.sigmoid(zv);
  // Unaveraged objective: N*C * mean-form loss.
  Val loss = t.affine(mmil_loss(t, p, y), static_cast<double>(N * C), 0.0);
  t.backward(loss);

  const Tensor analytic = analytic_logit_grad(z, y);
  double max_err = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    max_err = std::max(max_err, std::abs(analytic.values[i] - z.grad[i]));
  }
  return max_err;
}

}  // namespace

std::vector<CheckResult> run_gradcheck_suite(double tolerance, double h,
                                             double identity_tolerance,
                                             std::size_t instances_per_primitive,
                                             std::uint64_t seed) {
  std::vector<CheckResult> out;
  SuiteBuilder sb{out, tolerance, h, instances_per_primitive, std::mt19937_64(seed)};

  auto shape23 = [](std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> d(1, 4);
    return Shape{d(rng), d(rng)};
  };

  sb.primitive("linear_x", [&](std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> d(1, 4);
    const std::size_t N = d(rng), K = d(rng), M = d(rng);
    Tensor x = random_tensor({N, K}, rng);
    Tensor w = random_tensor({K, M}, rng);
    Tensor b = random_tensor({M}, rng);
    Tensor r = random_tensor({N, M}, rng);
    return grad_check([&](Tape& t, Val xv) {
      return readout(t, t.linear(xv, t.input(w), t.input(b)), r);
    }, x, h);
  });
  sb.primitive("linear_w", [&](std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> d(1, 4);
    const std::size_t N = d(rng), K = d(rng), M = d(rng);
    Tensor x = random_tensor({N, K}, rng);
    Tensor w = random_tensor({K, M}, rng);
    Tensor b = random_tensor({M}, rng);
    Tensor r = random_tensor({N, M}, rng);
    return grad_check([&](Tape& t, Val wv) {
      return readout(t, t.linear(t.input(x), wv, t.input(b)), r);
    }, w, h);
  });
  sb.primitive("linear_b", [&](std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> d(1, 4);
    const std::size_t N = d(rng), K = d(rng), M = d(rng);
    Tensor x = random_tensor({N, K}, rng);
    Tensor w = random_tensor({K, M}, rng);
    Tensor b = random_tensor({M}, rng);
    Tensor r = random_tensor({N, M}, rng);
    return grad_check([&](Tape& t, Val bv) {
      return readout(t, t.linear(t.input(x), t.input(w), bv), r);
    }, b, h);
  });
  sb.primitive("matmul", [&](std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> d(1, 3);
    const std::size_t M = d(rng), K = d(rng), N = d(rng);
    Tensor a = random_tensor({M, K}, rng);
    Tensor b = random_tensor({K, N}, rng);
    Tensor r = random_tensor({M, N}, rng);
    return std::max(
        grad_check([&](Tape& t, Val av) { return readout(t, t.matmul(av, t.input(b)), r); }, a, h),
        grad_check([&](Tape& t, Val bv) { return readout(t, t.matmul(t.input(a), bv), r); }, b, h));
  });
  sb.primitive("matmul_batched", [&](std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> d(1, 3);
    const std::size_t B = d(rng), M = d(rng), K = d(rng), N = d(rng);
    Tensor a = random_tensor({B, M, K}, rng);
    Tensor b = random_tensor({B, K, N}, rng);
    Tensor r = random_tensor({B, M, N}, rng);
    return std::max(
        grad_check([&](Tape& t, Val av) { return readout(t, t.matmul(av, t.input(b)), r); }, a, h),
        grad_check([&](Tape& t, Val bv) { return readout(t, t.matmul(t.input(a), bv), r); }, b, h));
  });
  sb.primitive("add", [&](std::mt19937_64& rng) {
    Shape s = shape23(rng);
    Tensor a = random_tensor(s, rng), b = random_tensor(s, rng), r = random_tensor(s, rng);
    return std::max(
        grad_check([&](Tape& t, Val v) { return readout(t, t.add(v, t.input(b)), r); }, a, h),
        grad_check([&](Tape& t, Val v) { return readout(t, t.add(t.input(a), v), r); }, b, h));
  });
  sb.primitive("add_broadcast", [&](std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> d(2, 4);
    const std::size_t N = d(rng), T = d(rng), C = d(rng);
    Tensor a = random_tensor({N, T, C}, rng);
    Tensor b = random_tensor({N, T, 1}, rng);
    Tensor r = random_tensor({N, T, C}, rng);
    return grad_check([&](Tape& t, Val v) { return readout(t, t.add(t.input(a), v), r); }, b, h);
  });
  sb.primitive("mul", [&](std::mt19937_64& rng) {
    Shape s = shape23(rng);
    Tensor a = random_tensor(s, rng), b = random_tensor(s, rng), r = random_tensor(s, rng);
    return std::max(
        grad_check([&](Tape& t, Val v) { return readout(t, t.mul(v, t.input(b)), r); }, a, h),
        grad_check([&](Tape& t, Val v) { return readout(t, t.mul(t.input(a), v), r); }, b, h));
  });
  sb.primitive("mul_broadcast", [&](std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> d(2, 4);
    const std::size_t N = d(rng), T = d(rng), C = d(rng);
    Tensor a = random_tensor({N, T, C}, rng);
    Tensor b = random_tensor({N, T, 1}, rng);
    Tensor r = random_tensor({N, T, C}, rng);
    return grad_check([&](Tape& t, Val v) { return readout(t, t.mul(t.input(a), v), r); }, b, h);
  });
  sb.primitive("affine", [&](std::mt19937_64& rng) {
    Shape s = shape23(rng);
    Tensor x = random_tensor(s, rng), r = random_tensor(s, rng);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    const double k = u(rng), c = u(rng);
    return grad_check([&](Tape& t, Val v) { return readout(t, t.affine(v, k, c), r); }, x, h);
  });
  sb.primitive("sigmoid", [&](std::mt19937_64& rng) {
    Shape s = shape23(rng);
    Tensor x = random_tensor(s, rng, -4.0, 4.0), r = random_tensor(s, rng);
    return grad_check([&](Tape& t, Val v) { return readout(t, t.sigmoid(v), r); }, x, h);
  });
  sb.primitive("tanh", [&](std::mt19937_64& rng) {
    Shape s = shape23(rng);
    Tensor x = random_tensor(s, rng, -3.0, 3.0), r = random_tensor(s, rng);
    return grad_check([&](Tape& t, Val v) { return readout(t, t.tanh(v), r); }, x, h);
  });
  sb.primitive("relu", [&](std::mt19937_64& rng) {
    Shape s = shape23(rng);
    Tensor x = random_tensor_away_from(s, rng, 0.0, 0.05);
    Tensor r = random_tensor(s, rng);
    return grad_check([&](Tape& t, Val v) { return readout(t, t.relu(v), r); }, x, h);
  });
  sb.primitive("log", [&](std::mt19937_64& rng) {
    Shape s = shape23(rng);
    Tensor x = random_tensor(s, rng, 0.1, 3.0), r = random_tensor(s, rng);
    return grad_check([&](Tape& t, Val v) { return readout(t, t.log(v), r); }, x, h);
  });
  sb.primitive("clamp", [&](std::mt19937_64& rng) {
    Shape s = shape23(rng);
    Tensor x = random_tensor(s, rng);
    for (double& v : x.values) {
      if (std::abs(v - 1.0) < 0.05) v = 1.2;
      if (std::abs(v + 1.0) < 0.05) v = -1.2;
    }
    Tensor r = random_tensor(s, rng);
    return grad_check([&](Tape& t, Val v) { return readout(t, t.clamp(v, -1.0, 1.0), r); }, x, h);
  });
  sb.primitive("softmax_last_axis", [&](std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> d(2, 4);
    Shape s{d(rng), d(rng)};
    Tensor x = random_tensor(s, rng), r = random_tensor(s, rng);
    return grad_check([&](Tape& t, Val v) { return readout(t, t.softmax(v, {1}), r); }, x, h);
  });
  sb.primitive("softmax_joint_axes", [&](std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> d(2, 3);
    Shape s{d(rng), d(rng), d(rng)};
    Tensor x = random_tensor(s, rng), r = random_tensor(s, rng);
    return grad_check([&](Tape& t, Val v) { return readout(t, t.softmax(v, {0, 2}), r); }, x, h);
  });
  sb.primitive("concat", [&](std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> d(1, 3);
    const std::size_t N = d(rng), Ta = d(rng), Tb = d(rng), C = d(rng);
    Tensor a = random_tensor({N, Ta, C}, rng);
    Tensor b = random_tensor({N, Tb, C}, rng);
    Tensor r = random_tensor({N, Ta + Tb, C}, rng);
    return std::max(
        grad_check([&](Tape& t, Val v) { return readout(t, t.concat({v, t.input(b)}, 1), r); }, a, h),
        grad_check([&](Tape& t, Val v) { return readout(t, t.concat({t.input(a), v}, 1), r); }, b, h));
  });
  sb.primitive("transpose", [&](std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> d(2, 3);
    Shape s{d(rng), d(rng), d(rng)};
    Tensor x = random_tensor(s, rng);
    Tensor r = random_tensor({s[0], s[2], s[1]}, rng);
    return grad_check([&](Tape& t, Val v) { return readout(t, t.transpose(v, {0, 2, 1}), r); }, x, h);
  });
  sb.primitive("reshape", [&](std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> d(1, 4);
    const std::size_t N = d(rng), M = d(rng);
    Tensor x = random_tensor({N, M}, rng);
    Tensor r = random_tensor({N * M}, rng);
    return grad_check([&](Tape& t, Val v) { return readout(t, t.reshape(v, {N * M}), r); }, x, h);
  });
  sb.primitive("sum_axes", [&](std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> d(2, 4);
    Shape s{d(rng), d(rng), d(rng)};
    Tensor x = random_tensor(s, rng);
    Tensor r = random_tensor({s[0], s[2]}, rng);
    return grad_check([&](Tape& t, Val v) { return readout(t, t.sum(v, {1}, false), r); }, x, h);
  });
  sb.primitive("mean_axes", [&](std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> d(2, 4);
    Shape s{d(rng), d(rng)};
    Tensor x = random_tensor(s, rng);
    Tensor r = random_tensor({s[1]}, rng);
    return grad_check([&](Tape& t, Val v) { return readout(t, t.mean(v, {0}, false), r); }, x, h);
  });

  {
    CheckResult r{"pipeline_traditional", pipeline_fd_check(PipelineMode::traditional, h, seed + 101),
                  tolerance, false};
    r.pass = r.max_err < tolerance;
    out.push_back(r);
  }
  {
    CheckResult r{"pipeline_msdu", pipeline_fd_check(PipelineMode::msdu, h, seed + 202), tolerance,
                  false};
    r.pass = r.max_err < tolerance;
    out.push_back(r);
  }
  {
    CheckResult r{"analytic_logit_grad", eq5_identity_check(seed + 303), identity_tolerance, false};
    r.pass = r.max_err < identity_tolerance;
    out.push_back(r);
  }
  return out;
}

bool report_checks(const std::vector<CheckResult>& checks, std::ostream& os) {
  bool all = true;
  for (const auto& c : checks) {
    os << (c.pass ? "[PASS] " : "[FAIL] ") << c.name << " max_err=" << c.max_err
       << " tol=" << c.tolerance << "\n";
    all = all && c.pass;
  }
  return all;
}

}  // namespace avvp
