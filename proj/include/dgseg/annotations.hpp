#pragma once

// Dataset persistence. A generated dataset directory looks like
//
//   out/
//     annotations.json          COCO-style boxes + categories (training input)
//     images/scene_0000.png     8-bit RGB
//     depth/scene_0000.dbr      float64 pseudo-depth (DBR1)
//     eval/masks_0000.png       label map of visible instance masks
//     eval/eval.json            annotation id <-> label bookkeeping
//
// Training code may read only annotations.json + images/ + depth/: the
// TrainScene type carries no mask, so leaking ground truth into the trainer
// is a type error, not a discipline. Masks live under eval/ and are loaded
// only by evaluation/rendering.
//
// annotations.json subset: images[{id, file_name, depth_file, width,
// height}], annotations[{id, image_id, category_id, bbox=[x,y,w,h]}],
// categories[{id, name}].

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dgseg/errors.hpp"
#include "dgseg/raster.hpp"
#include "dgseg/raster_io.hpp"
#include "dgseg/scene.hpp"

namespace dgseg {

using ordered_json = nlohmann::ordered_json;

struct ImageRecord {
  int id = 0;
  std::string file_name;
  std::string depth_file;
  int width = 0;
  int height = 0;
};

struct AnnotationRecord {
  int id = 0;
  int image_id = 0;
  int category_id = 0;
  Box box; // stored as [x, y, w, h] in the JSON
};

struct AnnotationSet {
  std::vector<ImageRecord> images;
  std::vector<AnnotationRecord> annotations;
  std::map<int, std::string> categories;
};

/// What the trainer is allowed to see: image, pseudo-depth, boxes. No masks.
struct TrainScene {
  int id = 0;
  Raster image;
  Raster pseudo_depth;
  std::vector<Box> boxes;
  std::vector<int> categories;
  std::vector<int> annotation_ids;
};

struct EvalInstance {
  int annotation_id = 0;
  int category = 0;
  Box box;
  Raster mask; // binary visible mask
};

struct EvalScene {
  int id = 0;
  std::vector<EvalInstance> instances;
};

namespace detail {

inline std::string scene_stem(int id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d", id);
  return buf;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p);
  if (!f) throw ValidationError("cannot write " + p.string());
  f << text;
  if (!f) throw ValidationError("short write to " + p.string());
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream f(p);
  if (!f) throw ValidationError("cannot open " + p.string());
  std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return s;
}

inline ordered_json parse_json_file(const std::filesystem::path& p) {
  try {
    return ordered_json::parse(read_text(p));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed JSON in " + p.string() + ": " + e.what());
  }
}

} // namespace detail

inline ordered_json annotations_to_json(const std::vector<Scene>& scenes) {
  ordered_json root;
  root["info"] = {{"description", "synthetic desk scenes"}, {"version", "1"}};
  // Insert every key before taking references: ordered_json keeps members
  // in a vector, so a later insertion would invalidate them.
  root["images"] = ordered_json::array();
  root["annotations"] = ordered_json::array();
  root["categories"] = ordered_json::array();
  auto& images = root["images"];
  auto& anns = root["annotations"];
  int ann_id = 1;
  for (const Scene& s : scenes) {
    const std::string stem = detail::scene_stem(s.id);
    images.push_back({{"id", s.id},
                      {"file_name", "images/scene_" + stem + ".png"},
                      {"depth_file", "depth/scene_" + stem + ".dbr"},
                      {"width", s.image.width},
                      {"height", s.image.height}});
    for (const SceneInstance& inst : s.instances) {
      anns.push_back({{"id", ann_id++},
                      {"image_id", s.id},
                      {"category_id", static_cast<int>(inst.kind)},
                      {"bbox", {inst.box.x0, inst.box.y0, inst.box.w(), inst.box.h()}}});
    }
  }
  for (int k = 1; k <= 3; ++k)
    root["categories"].push_back({{"id", k}, {"name", shape_name(static_cast<ShapeKind>(k))}});
  return root;
}

/// Writes a full dataset directory. Refuses a non-empty directory unless
/// `force` is set.
inline void save_dataset(const std::string& dir, const std::vector<Scene>& scenes,
                         bool force) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  if (fs::exists(root) && !fs::is_directory(root))
    throw ValidationError("output path exists and is not a directory: " + dir);
  if (fs::exists(root) && !fs::is_empty(root) && !force)
    throw ValidationError("output directory not empty (use --force): " + dir);
  fs::create_directories(root / "images");
  fs::create_directories(root / "depth");
  fs::create_directories(root / "eval");

  ordered_json eval_root;
  auto& eval_scenes = eval_root["scenes"] = ordered_json::array();
  int ann_id = 1;
  for (const Scene& s : scenes) {
    const std::string stem = detail::scene_stem(s.id);
    save_png((root / "images" / ("scene_" + stem + ".png")).string(), s.image);
    save_raster64((root / "depth" / ("scene_" + stem + ".dbr")).string(), s.pseudo_depth);

    // Visible masks are disjoint, so one label raster per scene suffices:
    // 0 = background, k = instance k (value k/255 in the gray PNG).
    Raster labels(s.image.height, s.image.width, 1);
    ordered_json inst_list = ordered_json::array();
    for (std::size_t k = 0; k < s.instances.size(); ++k) {
      const auto& inst = s.instances[k];
      const double v = static_cast<double>(k + 1) / 255.0;
      for (std::size_t p = 0; p < labels.data.size(); ++p)
        if (inst.visible_mask.data[p] > 0.5) labels.data[p] = v;
      inst_list.push_back({{"annotation_id", ann_id},
                           {"label", static_cast<int>(k + 1)},
                           {"category_id", static_cast<int>(inst.kind)}});
      ++ann_id;
    }
    save_png((root / "eval" / ("masks_" + stem + ".png")).string(), labels);
    eval_scenes.push_back({{"image_id", s.id},
                           {"mask_file", "eval/masks_" + stem + ".png"},
                           {"instances", inst_list}});
  }
  detail::write_text(root / "annotations.json", annotations_to_json(scenes).dump(2) + "\n");
  detail::write_text(root / "eval" / "eval.json", eval_root.dump(2) + "\n");
}

/// Parses and validates annotations.json. Every malformed record is
/// reported with its id; dangling references are errors.
inline AnnotationSet load_annotations(const std::string& path) {
  const ordered_json root = detail::parse_json_file(path);
  AnnotationSet set;
  if (!root.contains("images") || !root.contains("annotations") ||
      !root.contains("categories"))
    throw ValidationError(path + ": missing images/annotations/categories");

  std::map<int, const ImageRecord*> by_id;
  try {
    for (const auto& j : root["images"]) {
      ImageRecord rec;
      rec.id = j.at("id").get<int>();
      rec.file_name = j.at("file_name").get<std::string>();
      rec.depth_file = j.value("depth_file", std::string{});
      rec.width = j.at("width").get<int>();
      rec.height = j.at("height").get<int>();
      if (rec.width <= 0 || rec.height <= 0)
        throw ValidationError(path + ": image " + std::to_string(rec.id) +
                              " has non-positive size");
      set.images.push_back(rec);
    }
    for (const auto& j : root["categories"])
      set.categories[j.at("id").get<int>()] = j.at("name").get<std::string>();
    for (const auto& j : root["annotations"]) {
      AnnotationRecord rec;
      rec.id = j.at("id").get<int>();
      rec.image_id = j.at("image_id").get<int>();
      rec.category_id = j.at("category_id").get<int>();
      const auto& bb = j.at("bbox");
      if (!bb.is_array() || bb.size() != 4)
        throw ValidationError(path + ": annotation " + std::to_string(rec.id) +
                              " bbox must be [x,y,w,h]");
      const double x = bb[0].get<double>(), y = bb[1].get<double>();
      const double w = bb[2].get<double>(), h = bb[3].get<double>();
      rec.box = Box{x, y, x + w, y + h};
      set.annotations.push_back(rec);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": malformed record: " + e.what());
  }

  for (const auto& img : set.images) {
    if (by_id.count(img.id))
      throw ValidationError(path + ": duplicate image id " + std::to_string(img.id));
    by_id[img.id] = &img;
  }
  std::map<int, bool> ann_seen;
  for (const auto& a : set.annotations) {
    if (ann_seen[a.id])
      throw ValidationError(path + ": duplicate annotation id " + std::to_string(a.id));
    ann_seen[a.id] = true;
    const auto it = by_id.find(a.image_id);
    if (it == by_id.end())
      throw ValidationError(path + ": annotation " + std::to_string(a.id) +
                            " references missing image " + std::to_string(a.image_id));
    if (!set.categories.count(a.category_id))
      throw ValidationError(path + ": annotation " + std::to_string(a.id) +
                            " references missing category " + std::to_string(a.category_id));
    const ImageRecord& img = *it->second;
    if (!(a.box.w() > 0.0) || !(a.box.h() > 0.0))
      throw ValidationError(path + ": annotation " + std::to_string(a.id) +
                            " has a degenerate box");
    if (a.box.x0 < -1e-9 || a.box.y0 < -1e-9 || a.box.x1 > img.width + 1e-9 ||
        a.box.y1 > img.height + 1e-9)
      throw ValidationError(path + ": annotation " + std::to_string(a.id) +
                            " box leaves the image");
  }
  return set;
}

/// Loads the training view of a dataset: images + pseudo-depth + boxes.
inline std::vector<TrainScene> load_train_scenes(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  const AnnotationSet set = load_annotations((root / "annotations.json").string());
  std::vector<TrainScene> scenes;
  scenes.reserve(set.images.size());
  for (const auto& img : set.images) {
    TrainScene ts;
    ts.id = img.id;
    ts.image = load_png((root / img.file_name).string());
    if (ts.image.channels != 3)
      throw ValidationError(img.file_name + ": expected an RGB image");
    if (ts.image.width != img.width || ts.image.height != img.height)
      throw ValidationError(img.file_name + ": size disagrees with annotations");
    if (img.depth_file.empty())
      throw ValidationError("image " + std::to_string(img.id) + " has no depth_file");
    ts.pseudo_depth = load_raster64((root / img.depth_file).string());
    if (ts.pseudo_depth.height != img.height || ts.pseudo_depth.width != img.width ||
        ts.pseudo_depth.channels != 1)
      throw ValidationError(img.depth_file + ": depth shape disagrees with image");
    scenes.push_back(std::move(ts));
  }
  std::map<int, TrainScene*> by_id;
  for (auto& ts : scenes) by_id[ts.id] = &ts;
  for (const auto& a : set.annotations) {
    TrainScene* ts = by_id.at(a.image_id);
    ts->boxes.push_back(a.box);
    ts->categories.push_back(a.category_id);
    ts->annotation_ids.push_back(a.id);
  }
  return scenes;
}

/// Loads the evaluation view: per-scene ground-truth instance masks.
inline std::vector<EvalScene> load_eval_scenes(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  const AnnotationSet set = load_annotations((root / "annotations.json").string());
  std::map<int, const AnnotationRecord*> ann_by_id;
  for (const auto& a : set.annotations) ann_by_id[a.id] = &a;

  const ordered_json eval_root = detail::parse_json_file(root / "eval" / "eval.json");
  if (!eval_root.contains("scenes"))
    throw ValidationError("eval.json: missing scenes array");

  std::vector<EvalScene> out;
  for (const auto& js : eval_root["scenes"]) {
    EvalScene es;
    es.id = js.at("image_id").get<int>();
    const Raster labels = load_png((root / js.at("mask_file").get<std::string>()).string());
    if (labels.channels != 1)
      throw ValidationError("eval mask for scene " + std::to_string(es.id) +
                            " must be grayscale");
    for (const auto& ji : js.at("instances")) {
      EvalInstance ei;
      ei.annotation_id = ji.at("annotation_id").get<int>();
      const int label = ji.at("label").get<int>();
      const auto it = ann_by_id.find(ei.annotation_id);
      if (it == ann_by_id.end())
        throw ValidationError("eval.json references missing annotation " +
                              std::to_string(ei.annotation_id));
      ei.category = it->second->category_id;
      ei.box = it->second->box;
      ei.mask = Raster(labels.height, labels.width, 1);
      long px = 0;
      for (std::size_t p = 0; p < labels.data.size(); ++p) {
        if (static_cast<int>(std::lround(labels.data[p] * 255.0)) == label) {
          ei.mask.data[p] = 1.0;
          ++px;
        }
      }
      if (px == 0)
        throw ValidationError("eval mask for annotation " +
                              std::to_string(ei.annotation_id) + " is empty");
      es.instances.push_back(std::move(ei));
    }
    out.push_back(std::move(es));
  }
  return out;
}

} // namespace dgseg
