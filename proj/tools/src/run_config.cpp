#include "rdcnet_cli/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rdcnet/errors.hpp"

namespace rdc::cli {

using nlohmann::json;

namespace {

/// Reads keys out of one JSON object, remembering which were consumed so
/// leftovers can be reported.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = node_.find(key);
    if (it == node_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + ": wrong type");
    }
  }

  void get_pair(const char* key, std::pair<double, double>& out) {
    std::vector<double> v{out.first, out.second};
    get(key, v);
    if (v.size() != 2) throw ConfigError(where(key) + ": expected [low, high]");
    out = {v[0], v[1]};
  }

  bool has(const char* key) const { return node_.contains(key); }

  Section sub(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    auto it = node_.find(key);
    return Section(it == node_.end() ? empty : *it, where(key));
  }

  void finish() const {
    for (auto it = node_.begin(); it != node_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(where(it.key().c_str()) + ": unknown key");
    }
  }

  std::string where(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_model(Section s, RDCNetConfig& m) {
  s.get("in_channels", m.in_channels);
  s.get("groups", m.groups);
  s.get("group_channels", m.group_channels);
  s.get("dilation_rates", m.dilation_rates);
  s.get("iterations", m.iterations);
  s.get("scale", m.scale);
  s.get("stem_channels", m.stem_channels);
  s.get("embedding_dim", m.embedding_dim);
  s.get("semantic_classes", m.semantic_classes);
  s.get("dropout_p", m.dropout_p);
  s.get("leaky_slope", m.leaky_slope);
  s.finish();
}

void read_loss(Section s, LossConfig& l) {
  s.get("margin", l.margin);
  s.get("semantic_weight", l.semantic_weight);
  s.get("instance_weight", l.instance_weight);
  s.get("epsilon", l.epsilon);
  s.get("supervise_all_iterations", l.supervise_all_iterations);
  s.get("centroid_stop_gradient", l.centroid_stop_gradient);
  s.finish();
}

void read_decoder(Section s, DecoderConfig& d, double margin) {
  d.window = DecoderConfig::window_for_margin(margin);
  s.get("fg_threshold", d.fg_threshold);
  s.get("window", d.window);
  s.get("min_votes", d.min_votes);
  s.get("opening_radius", d.opening_radius);
  s.finish();
}

void read_augment(Section s, AugmentConfig& a) {
  {
    Section f = s.sub("flip");
    f.get("enabled", a.flip.enabled);
    f.get("p_flip", a.flip.p_flip);
    std::vector<std::string> axes;
    for (auto axis : a.flip.axes) axes.push_back(axis == FlipAxis::X ? "x" : "y");
    f.get("axes", axes);
    a.flip.axes.clear();
    for (const auto& axis : axes) {
      if (axis == "x") {
        a.flip.axes.push_back(FlipAxis::X);
      } else if (axis == "y") {
        a.flip.axes.push_back(FlipAxis::Y);
      } else {
        throw ConfigError(f.where("axes") + ": axis must be \"x\" or \"y\"");
      }
    }
    f.finish();
  }
  {
    Section o = s.sub("offset");
    o.get("enabled", a.offset.enabled);
    o.get("mu", a.offset.mu);
    o.get("sigma", a.offset.sigma);
    o.finish();
  }
  {
    Section n = s.sub("noise");
    n.get("enabled", a.noise.enabled);
    n.get("mu", a.noise.mu);
    n.get("sigma", a.noise.sigma);
    n.finish();
  }
  {
    Section h = s.sub("hsv");
    h.get("enabled", a.hsv.enabled);
    h.get("hue_delta", a.hsv.hue_delta);
    h.get_pair("sat_range", a.hsv.sat_range);
    h.get_pair("val_range", a.hsv.val_range);
    h.finish();
  }
  {
    Section b = s.sub("blur");
    b.get("enabled", a.blur.enabled);
    b.get("p_active", a.blur.p_active);
    b.get_pair("sigma_range", a.blur.sigma_range);
    b.finish();
  }
  {
    Section f = s.sub("affine");
    f.get("enabled", a.affine.enabled);
    f.get_pair("zoom_range", a.affine.zoom_range);
    f.get("shear_deg", a.affine.shear_deg);
    f.get("rot_deg", a.affine.rot_deg);
    f.finish();
  }
  {
    Section w = s.sub("warp");
    w.get("enabled", a.warp.enabled);
    w.get("amplitude", a.warp.amplitude);
    w.finish();
  }
  {
    Section c = s.sub("clip");
    c.get("enabled", a.clip.enabled);
    c.get("mu_min", a.clip.mu_min);
    c.get("mu_max", a.clip.mu_max);
    c.get("sigma", a.clip.sigma);
    c.finish();
  }
  s.finish();
}

void read_trainer(Section s, TrainerConfig& t) {
  s.get("epochs", t.epochs);
  s.get("batch_size", t.batch_size);
  s.get("lr_max", t.lr_max);
  s.get("lr_min", t.lr_min);
  s.get("checkpoint_dir", t.checkpoint_dir);
  s.get("patch_size", t.patch_size);
  s.finish();
}

void read_data(Section s, DataConfig& d) {
  s.get("size", d.synthetic.size);
  s.get("min_instances", d.synthetic.min_instances);
  s.get("max_instances", d.synthetic.max_instances);
  s.get_pair("radius_range", d.synthetic.radius_range);
  s.get("overlap_fraction", d.synthetic.overlap_fraction);
  s.get("noise_level", d.synthetic.noise_level);
  s.get("n_train", d.n_train);
  s.get("n_val", d.n_val);
  s.get("n_test", d.n_test);
  s.finish();
}

json pair_json(const std::pair<double, double>& p) { return json::array({p.first, p.second}); }

}  // namespace

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  decoder.validate();
  augment.validate();
  trainer.validate(model);
  data.synthetic.validate();
  if (data.synthetic.size % model.scale != 0) {
    throw ConfigError("data.size: patch extent " + std::to_string(data.synthetic.size) + " is not divisible by model.scale " +
                      std::to_string(model.scale));
  }
  if (data.n_train < 0 || data.n_val < 0 || data.n_test < 0) throw ConfigError("data.n_*: counts must be >= 0");
}

TrainSetup RunConfig::train_setup() const {
  TrainSetup s{model, loss, decoder, augment, trainer};
  s.trainer.seed = seed;
  return s;
}

RunConfig parse_run_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON (") + e.what() + ")");
  }
  RunConfig c;
  Section s(root, "");
  s.get("seed", c.seed);
  read_model(s.sub("model"), c.model);
  read_loss(s.sub("loss"), c.loss);
  read_decoder(s.sub("decoder"), c.decoder, c.loss.margin);
  read_augment(s.sub("augment"), c.augment);
  read_trainer(s.sub("trainer"), c.trainer);
  read_data(s.sub("data"), c.data);
  s.finish();
  c.trainer.seed = c.seed;
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string() + ": cannot open config");
  std::ostringstream text;
  text << in.rdbuf();
  try {
    return parse_run_config(text.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string dump_run_config(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["model"] = {{"in_channels", c.model.in_channels},
                {"groups", c.model.groups},
                {"group_channels", c.model.group_channels},
                {"dilation_rates", c.model.dilation_rates},
                {"iterations", c.model.iterations},
                {"scale", c.model.scale},
                {"stem_channels", c.model.stem_channels},
                {"embedding_dim", c.model.embedding_dim},
                {"semantic_classes", c.model.semantic_classes},
                {"dropout_p", c.model.dropout_p},
                {"leaky_slope", c.model.leaky_slope}};
  j["loss"] = {{"margin", c.loss.margin},
               {"semantic_weight", c.loss.semantic_weight},
               {"instance_weight", c.loss.instance_weight},
               {"epsilon", c.loss.epsilon},
               {"supervise_all_iterations", c.loss.supervise_all_iterations},
               {"centroid_stop_gradient", c.loss.centroid_stop_gradient}};
  j["decoder"] = {{"fg_threshold", c.decoder.fg_threshold},
                  {"window", c.decoder.window},
                  {"min_votes", c.decoder.min_votes},
                  {"opening_radius", c.decoder.opening_radius}};
  const auto& a = c.augment;
  json axes = json::array();
  for (auto axis : a.flip.axes) axes.push_back(axis == FlipAxis::X ? "x" : "y");
  j["augment"] = {
      {"flip", {{"enabled", a.flip.enabled}, {"p_flip", a.flip.p_flip}, {"axes", axes}}},
      {"offset", {{"enabled", a.offset.enabled}, {"mu", a.offset.mu}, {"sigma", a.offset.sigma}}},
      {"noise", {{"enabled", a.noise.enabled}, {"mu", a.noise.mu}, {"sigma", a.noise.sigma}}},
      {"hsv",
       {{"enabled", a.hsv.enabled},
        {"hue_delta", a.hsv.hue_delta},
        {"sat_range", pair_json(a.hsv.sat_range)},
        {"val_range", pair_json(a.hsv.val_range)}}},
      {"blur", {{"enabled", a.blur.enabled}, {"p_active", a.blur.p_active}, {"sigma_range", pair_json(a.blur.sigma_range)}}},
      {"affine",
       {{"enabled", a.affine.enabled},
        {"zoom_range", pair_json(a.affine.zoom_range)},
        {"shear_deg", a.affine.shear_deg},
        {"rot_deg", a.affine.rot_deg}}},
      {"warp", {{"enabled", a.warp.enabled}, {"amplitude", a.warp.amplitude}}},
      {"clip", {{"enabled", a.clip.enabled}, {"mu_min", a.clip.mu_min}, {"mu_max", a.clip.mu_max}, {"sigma", a.clip.sigma}}},
  };
  j["trainer"] = {{"epochs", c.trainer.epochs},
                  {"batch_size", c.trainer.batch_size},
                  {"lr_max", c.trainer.lr_max},
                  {"lr_min", c.trainer.lr_min},
                  {"checkpoint_dir", c.trainer.checkpoint_dir},
                  {"patch_size", c.trainer.patch_size}};
  const auto& d = c.data;
  j["data"] = {{"size", d.synthetic.size},
               {"min_instances", d.synthetic.min_instances},
               {"max_instances", d.synthetic.max_instances},
               {"radius_range", pair_json(d.synthetic.radius_range)},
               {"overlap_fraction", d.synthetic.overlap_fraction},
               {"noise_level", d.synthetic.noise_level},
               {"n_train", d.n_train},
               {"n_val", d.n_val},
               {"n_test", d.n_test}};
  return j.dump(2) + "\n";
}

}  // namespace rdc::cli
