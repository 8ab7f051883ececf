#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "servograsp/baselines.hpp"
#include "servograsp/config.hpp"
#include "servograsp/data_pipeline.hpp"
#include "servograsp/eval_harness.hpp"
#include "servograsp/thread_pool.hpp"

namespace py = pybind11;
using namespace sg;

namespace {

py::array_t<float> image_to_array(const Image& img) {
  py::array_t<float> out({img.height, img.width, img.channels});
  std::copy(img.data.begin(), img.data.end(), out.mutable_data());
  return out;
}

Image array_to_image(const py::array_t<float, py::array::c_style |
                                                  py::array::forcecast>& a) {
  if (a.ndim() != 3) throw std::invalid_argument("image must be HxWxC");
  Image img;
  img.height = static_cast<int>(a.shape(0));
  img.width = static_cast<int>(a.shape(1));
  img.channels = static_cast<int>(a.shape(2));
  img.data.assign(a.data(), a.data() + a.size());
  return img;
}

MotorCommand command_from_tuple(const std::array<double, 5>& v) {
  MotorCommand c{v[0], v[1], v[2], v[3], v[4]};
  if (!c.is_valid()) {
    throw std::invalid_argument("command: sin^2+cos^2 must equal 1");
  }
  return c;
}

}  // namespace

PYBIND11_MODULE(_servograsp, m) {
  m.doc() = "Simulated self-supervised grasping: world, predictor, servoing";

  m.def("set_workers", &ThreadPool::set_workers, py::arg("n"));

  py::class_<Pose>(m, "Pose")
      .def(py::init([](double x, double y, double z, double theta) {
             return Pose{x, y, z, theta};
           }),
           py::arg("x") = 0.0, py::arg("y") = 0.0, py::arg("z") = 0.0,
           py::arg("theta") = 0.0)
      .def_readwrite("x", &Pose::x)
      .def_readwrite("y", &Pose::y)
      .def_readwrite("z", &Pose::z)
      .def_readwrite("theta", &Pose::theta);

  py::class_<SceneConfig>(m, "SceneConfig")
      .def(py::init<>())
      .def_readwrite("min_objects", &SceneConfig::min_objects)
      .def_readwrite("max_objects", &SceneConfig::max_objects)
      .def_readwrite("min_len", &SceneConfig::min_len)
      .def_readwrite("max_len", &SceneConfig::max_len)
      .def_readwrite("image_hw", &SceneConfig::image_hw)
      .def_readwrite("slip_gain", &SceneConfig::slip_gain)
      .def_readwrite("max_aperture", &SceneConfig::max_aperture);

  py::class_<RobotVariation>(m, "RobotVariation")
      .def(py::init<>())
      .def_readwrite("camera_rotation", &RobotVariation::camera_rotation)
      .def_readwrite("camera_scale", &RobotVariation::camera_scale)
      .def_readwrite("actuation_noise_sigma",
                     &RobotVariation::actuation_noise_sigma);

  py::class_<GraspOutcome>(m, "GraspOutcome")
      .def_property_readonly("grasped_object",
                             [](const GraspOutcome& o) {
                               return o.grasped_object
                                          ? py::cast(*o.grasped_object)
                                          : py::none().cast<py::object>();
                             })
      .def_readonly("final_aperture", &GraspOutcome::final_aperture);

  py::class_<WorldState>(m, "WorldState")
      .def_property_readonly("gripper_pose",
                             [](const WorldState& w) { return w.gripper.pose; })
      .def_property_readonly("num_objects",
                             [](const WorldState& w) {
                               return w.objects.size();
                             })
      .def_property_readonly("holding", [](const WorldState& w) {
        return w.gripper.holding ? py::cast(*w.gripper.holding)
                                 : py::none().cast<py::object>();
      });

  m.def("spawn_scene",
        [](const SceneConfig& cfg, uint64_t seed, const RobotVariation& var) {
          return spawn_scene(cfg, seed, var);
        },
        py::arg("config"), py::arg("seed"),
        py::arg("variation") = RobotVariation{});
  m.def("step",
        [](WorldState& w, const std::array<double, 5>& cmd) {
          step(w, command_from_tuple(cmd));
        },
        py::arg("world"), py::arg("command"));
  m.def("render",
        [](const WorldState& w) { return image_to_array(render(w)); },
        py::arg("world"));
  m.def("render_heightmap",
        [](const WorldState& w) { return image_to_array(render_heightmap(w)); },
        py::arg("world"));
  m.def("close_gripper", &close_gripper, py::arg("world"));

  py::enum_<InjectMode>(m, "InjectMode")
      .value("ADD", InjectMode::Add)
      .value("CONCAT", InjectMode::Concat);

  py::class_<ArchSpec>(m, "ArchSpec")
      .def_static("scaled_default", &ArchSpec::scaled_default,
                  py::arg("input_hw") = 56,
                  py::arg("mode") = InjectMode::Add)
      .def_static("parse", &ArchSpec::parse, py::arg("text"))
      .def("to_text", &ArchSpec::to_text);

  py::class_<Network>(m, "Network")
      .def_property_readonly("arch_text", [](const Network& n) {
        return n.arch.to_text();
      });

  m.def("build_network", &build_network, py::arg("arch"), py::arg("seed"));
  m.def("save_network", &save_network, py::arg("network"), py::arg("path"));
  m.def("load_network", &load_network, py::arg("path"));
  m.def("forward",
        [](const Network& net, const py::array_t<float>& pregrasp,
           const py::array_t<float>& current,
           const std::array<double, 5>& cmd) {
          return forward_eval(net, array_to_image(pregrasp),
                              array_to_image(current),
                              command_from_tuple(cmd));
        },
        py::arg("network"), py::arg("pregrasp"), py::arg("current"),
        py::arg("command"));

  py::class_<ServoConfig>(m, "ServoConfig")
      .def(py::init<>())
      .def_readwrite("max_steps", &ServoConfig::max_steps)
      .def_readwrite("close_ratio", &ServoConfig::close_ratio)
      .def_readwrite("raise_ratio", &ServoConfig::raise_ratio);

  py::class_<DetectConfig>(m, "DetectConfig")
      .def(py::init<>())
      .def_readwrite("aperture_threshold", &DetectConfig::aperture_threshold)
      .def_readwrite("pixel_diff_threshold",
                     &DetectConfig::pixel_diff_threshold);

  py::class_<Episode>(m, "Episode")
      .def_readonly("label", &Episode::label)
      .def_readonly("truth", &Episode::truth)
      .def_readonly("robot_id", &Episode::robot_id)
      .def_readonly("collection_index", &Episode::collection_index)
      .def_property_readonly("num_steps",
                             [](const Episode& e) { return e.steps.size(); })
      .def_property_readonly("pregrasp", [](const Episode& e) {
        return image_to_array(e.pregrasp.to_image());
      })
      .def("step_image",
           [](const Episode& e, size_t t) {
             return image_to_array(e.steps.at(t).image.to_image());
           })
      .def("step_pose",
           [](const Episode& e, size_t t) {
             return e.steps.at(t).pose.to_pose();
           })
      .def("step_command", [](const Episode& e, size_t t) {
        const CommandF& c = e.steps.at(t).command;
        return std::array<double, 5>{c.dx, c.dy, c.dz, c.sin_dtheta,
                                     c.cos_dtheta};
      });

  m.def("run_servo_episode",
        [](WorldState& world, const Network& net, const ServoConfig& servo,
           const DetectConfig& detect, uint64_t seed) {
          NetPredictor pred(net);
          Rng rng(seed);
          return run_servo_episode(world, pred, servo, detect, rng, 0, seed);
        },
        py::arg("world"), py::arg("network"), py::arg("servo"),
        py::arg("detect"), py::arg("seed"));
  m.def("run_random_episode",
        [](WorldState& world, int max_steps, const DetectConfig& detect,
           uint64_t seed) {
          Rng rng(seed);
          return random_policy(world, max_steps, detect, rng, 0, seed);
        },
        py::arg("world"), py::arg("max_steps"), py::arg("detect"),
        py::arg("seed"));
  m.def("episode_to_samples",
        [](const Episode& ep) {
          std::vector<
              std::tuple<py::array_t<float>, py::array_t<float>,
                         std::array<double, 5>, int>>
              out;
          for (const GraspSample& s : episode_to_samples(ep)) {
            out.emplace_back(
                image_to_array(s.pregrasp->to_image()),
                image_to_array(s.current->to_image()),
                std::array<double, 5>{s.displacement.dx, s.displacement.dy,
                                      s.displacement.dz,
                                      s.displacement.sin_dtheta,
                                      s.displacement.cos_dtheta},
                s.label);
          }
          return out;
        },
        py::arg("episode"));

  m.def("write_shard", &write_shard, py::arg("episodes"), py::arg("path"));
  m.def("read_shard",
        [](const std::string& path) {
          ShardReadResult r = read_shard(path);
          return py::make_tuple(r.episodes, r.dropped);
        },
        py::arg("path"));
}
