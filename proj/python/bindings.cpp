#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "retvi/metrics.hpp"
#include "retvi/trainer.hpp"

namespace py = pybind11;
using namespace retvi;

namespace {

using NpArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

// numpy (H,W) or (H,W,C) -> internal [C,H,W]
Tensor raster_from_numpy(const NpArray& a) {
    const auto info = a.request();
    int h, w, c;
    if (info.ndim == 2) {
        h = static_cast<int>(info.shape[0]);
        w = static_cast<int>(info.shape[1]);
        c = 1;
    } else if (info.ndim == 3) {
        h = static_cast<int>(info.shape[0]);
        w = static_cast<int>(info.shape[1]);
        c = static_cast<int>(info.shape[2]);
    } else {
        throw ShapeError("expected a (H,W) or (H,W,C) array");
    }
    Tensor t({c, h, w});
    const double* src = static_cast<const double*>(info.ptr);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch)
                t.at(ch, y, x) = src[(static_cast<size_t>(y) * w + x) * c + ch];
    return t;
}

// internal [C,H,W] -> numpy (H,W,C)
py::array raster_to_numpy(const Tensor& t) {
    const int c = t.channels(), h = t.height(), w = t.width();
    py::array_t<double> out({h, w, c});
    double* dst = static_cast<double*>(out.request().ptr);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch)
                dst[(static_cast<size_t>(y) * w + x) * c + ch] = t.at(ch, y, x);
    return out;
}

ResizeMode mode_from_string(const std::string& mode) {
    if (mode == "reduce") return ResizeMode::Reduce;
    if (mode == "enlarge") return ResizeMode::Enlarge;
    throw DomainError("mode must be 'reduce' or 'enlarge'");
}

// Eval-side handle around the content feature analyzer.
class Retargeter {
public:
    static Retargeter random(std::uint64_t seed) {
        Retargeter r;
        Rng rng(seed);
        r.cfa_ = Cfa(rng);
        return r;
    }

    static Retargeter from_checkpoint(const std::string& path) {
        Retargeter r;
        Rng rng(0);
        r.cfa_ = Cfa(rng);
        Checkpoint ckpt = load_checkpoint(path);
        for (ParamRef& p : r.cfa_.params()) {
            const Tensor* t = ckpt.find(p.name);
            if (!t) throw IncompatibleCheckpointError("checkpoint missing tensor " + p.name);
            if (!t->same_shape(p.var.value()))
                throw IncompatibleCheckpointError("checkpoint shape mismatch for " + p.name);
            p.var.mutable_value() = *t;
        }
        return r;
    }

    py::array retarget(const NpArray& frame, double ratio, const std::string& axis,
                       double theta) {
        Frame f(raster_from_numpy(frame));
        const RetargetAxis ax = axis == "height" ? RetargetAxis::Height : RetargetAxis::Width;
        return raster_to_numpy(
            retarget_frame(f, RetargetSpec::from_ratio(ratio, ax, theta), cfa_).pixels);
    }

    py::array retarget_to_size(const NpArray& frame, int target_h, int target_w, double theta) {
        Frame f(raster_from_numpy(frame));
        return raster_to_numpy(retarget_frame_to_size(f, target_h, target_w, theta, cfa_).pixels);
    }

    py::array energy(const NpArray& frame) {
        Tensor t = raster_from_numpy(frame);
        NoGradGuard ng;
        Var d1 = cfa_.forward(Var::constant(t), false);
        Var e = upsample_energy(grid_activation(d1), t.height(), t.width());
        return raster_to_numpy(e.value());
    }

private:
    Cfa cfa_;
};

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Content-aware video retargeting core";

    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<DomainError>(m, "RetviDomainError");
    py::register_exception<ShapeError>(m, "RetviShapeError");

    m.def("flow_scale",
          [](double r, const std::string& mode) { return flow_scale(r, mode_from_string(mode)); },
          py::arg("ratio"), py::arg("mode"),
          "Displacement scale: (1-r)^2 when reducing, -(1-r)^2 when enlarging");

    m.def("build_deformation",
          [](const NpArray& energy, double scale, double theta) {
              Tensor e = raster_from_numpy(energy);
              NoGradGuard ng;
              return raster_to_numpy(build_deformation(Var::constant(e), scale, theta).value());
          },
          py::arg("energy"), py::arg("flow_scale"), py::arg("theta") = 1.0);

    m.def("deform_and_sample",
          [](const NpArray& frame, const NpArray& field, double sx, double sy) {
              Tensor f = raster_from_numpy(frame);
              Tensor h = raster_from_numpy(field);
              NoGradGuard ng;
              return raster_to_numpy(
                  deform_and_sample(Var::constant(f), Var::constant(h), sx, sy).value());
          },
          py::arg("frame"), py::arg("field"), py::arg("sx") = 1.0, py::arg("sy") = 1.0,
          "Backward-warp a (H,W,C) frame by a (H,W,2) displacement field");

    m.def("frame_difference",
          [](const NpArray& a, const NpArray& b) {
              return frame_difference(Frame(raster_from_numpy(a)), Frame(raster_from_numpy(b)));
          },
          py::arg("a"), py::arg("b"));

    m.def("bidirectional_error",
          [](const NpArray& a, const NpArray& b, int patch_size, int stride) {
              return bidirectional_error(Frame(raster_from_numpy(a)),
                                         Frame(raster_from_numpy(b)), {patch_size, stride});
          },
          py::arg("a"), py::arg("b"), py::arg("patch_size") = 7, py::arg("stride") = 4);

    m.def("stability",
          [](const std::vector<NpArray>& frames) {
              FrameSequence seq;
              for (const auto& f : frames) seq.frames.emplace_back(raster_from_numpy(f));
              StabilityReport rep = stability(seq);
              return py::make_tuple(rep.step_differences, rep.stb);
          },
          py::arg("frames"), "Per-step differences and the STB score of a sequence");

    py::class_<Retargeter>(m, "Retargeter")
        .def_static("random", &Retargeter::random, py::arg("seed") = 0,
                    "Untrained weights, for pipeline checks")
        .def_static("from_checkpoint", &Retargeter::from_checkpoint, py::arg("path"))
        .def("retarget", &Retargeter::retarget, py::arg("frame"), py::arg("ratio"),
             py::arg("axis") = "width", py::arg("theta") = 1.0)
        .def("retarget_to_size", &Retargeter::retarget_to_size, py::arg("frame"),
             py::arg("target_h"), py::arg("target_w"), py::arg("theta") = 1.0)
        .def("energy", &Retargeter::energy, py::arg("frame"),
             "Per-pixel signed (x,y) energy as (H,W,2), values in (-1,1)");
}
