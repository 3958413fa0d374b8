#include "meaformer/pipeline/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <iomanip>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "meaformer/numcore/rng.hpp"

namespace meaformer::pipeline {

MeasureFn two_step(const Measurer& m) {
  return [&m](const data::Phantom& p, Point click) { return m.measure(p.image, click, p.spacing_mm_per_px); };
}

MeasureFn step2_on_truth(const Measurer& m) {
  return [&m](const data::Phantom& p, Point click) {
    auto r = m.measure_loi(p.image, click, geom::loi_from_box(p.box, p.height(), p.width()), p.spacing_mm_per_px);
    r.box = p.box;
    return r;
  };
}

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd m;
  m.n = values.size();
  if (values.empty()) return m;
  for (double v : values) m.mean += v;
  m.mean /= double(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - m.mean) * (v - m.mean);
  m.std = std::sqrt(ss / double(values.size()));
  return m;
}

namespace {

CaseResult run_case(const data::Phantom& p, size_t index, const MeasureFn& measure, uint64_t seed) {
  CaseResult c;
  c.index = index;
  c.click = data::sample_click(p.mask, nc::Rng::derive_seed(seed, index));
  try {
    MeasurementReport r = measure(p, c.click);
    score(r, p);
    c.dice = *r.dice;
    c.box_iou = *r.box_iou;
    c.errors = *r.errors;
    c.flags = r.flags;
  } catch (const MeasurementError& e) {
    c.failed = true;
    c.error = e.what();
  }
  return c;
}

}  // namespace

Summary evaluate(const std::vector<data::Phantom>& cases, const MeasureFn& measure, uint64_t seed, int threads) {
  Summary s;
  s.cases.resize(cases.size());
  size_t workers = threads > 0 ? size_t(threads) : std::max(1u, std::thread::hardware_concurrency());
  workers = std::max<size_t>(1, std::min(workers, cases.size()));
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (size_t t = 0; t < workers; ++t)
    pool.emplace_back([&, t] {
      try {
        for (size_t i = t; i < cases.size(); i += workers) s.cases[i] = run_case(cases[i], i, measure, seed);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<double> dice;
  std::array<std::vector<double>, 4> lng, shrt;
  size_t hits = 0;
  for (const auto& c : s.cases) {
    dice.push_back(c.failed ? 0.0 : c.dice);
    if (c.failed) {
      ++s.failures;
      continue;
    }
    hits += c.box_iou > 0.5;
    for (size_t k = 0; k < 4; ++k) {
      lng[k].push_back(c.errors[k].long_mm);
      shrt[k].push_back(c.errors[k].short_mm);
    }
  }
  s.dice = mean_std(dice);
  for (size_t k = 0; k < 4; ++k) {
    s.long_mm[k] = mean_std(lng[k]);
    s.short_mm[k] = mean_std(shrt[k]);
  }
  s.box_accuracy = cases.empty() ? 0.0 : double(hits) / double(cases.size());
  return s;
}

namespace {

constexpr const char* kSourceNames[4] = {"segmentation", "heatmap", "regression", "fused"};

std::string pm(const MeanStd& m, double scale = 1.0, int digits = 2) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(digits) << m.mean * scale << " +- " << m.std * scale;
  return o.str();
}

}  // namespace

std::string format_summary(const Summary& s) {
  std::ostringstream o;
  o << "# reference (published, full scale): Dice 92.7 +- 4.3 %, fused long 1.6 +- 1.3 mm, "
       "short 1.4 +- 1.5 mm, box accuracy 99.1 %\n";
  o << "cases " << s.cases.size() << ", failed " << s.failures << "\n";
  o << "dice_percent  " << pm(s.dice, 100.0, 1) << "\n";
  o << "box_accuracy  " << std::fixed << std::setprecision(3) << s.box_accuracy << "\n";
  o << std::left << std::setw(14) << "source" << std::setw(20) << "long_mm" << "short_mm\n";
  for (size_t k = 0; k < 4; ++k)
    o << std::left << std::setw(14) << kSourceNames[k] << std::setw(20) << pm(s.long_mm[k]) << pm(s.short_mm[k])
      << "\n";
  return o.str();
}

std::string summary_rows(const Summary& s) {
  using nlohmann::json;
  std::ostringstream o;
  json head{{"row", "summary"},       {"cases", s.cases.size()},   {"failed", s.failures},
            {"dice_mean", s.dice.mean}, {"dice_std", s.dice.std}, {"box_accuracy", s.box_accuracy}};
  for (size_t k = 0; k < 4; ++k) {
    head[std::string(kSourceNames[k]) + "_long_mm_mean"] = s.long_mm[k].mean;
    head[std::string(kSourceNames[k]) + "_long_mm_std"] = s.long_mm[k].std;
    head[std::string(kSourceNames[k]) + "_short_mm_mean"] = s.short_mm[k].mean;
    head[std::string(kSourceNames[k]) + "_short_mm_std"] = s.short_mm[k].std;
  }
  o << head.dump() << "\n";
  for (const auto& c : s.cases) {
    json row{{"row", "case"}, {"index", c.index}, {"click", {c.click.x, c.click.y}}, {"failed", c.failed}};
    if (c.failed) {
      row["error"] = c.error;
    } else {
      row["dice"] = c.dice;
      row["box_iou"] = c.box_iou;
      for (size_t k = 0; k < 4; ++k)
        row[kSourceNames[k]] = {{"long_mm", c.errors[k].long_mm}, {"short_mm", c.errors[k].short_mm}};
      row["flags"] = c.flags;
    }
    o << row.dump() << "\n";
  }
  return o.str();
}

double dice_3d(const std::vector<Mask>& a, const std::vector<Mask>& b) {
  if (a.size() != b.size()) throw geom::GeometryError("dice_3d: slice counts differ");
  int64_t na = 0, nb = 0, both = 0;
  for (size_t z = 0; z < a.size(); ++z) {
    if (a[z].height != b[z].height || a[z].width != b[z].width) throw geom::GeometryError("dice_3d: slice shapes differ");
    for (size_t i = 0; i < a[z].values.size(); ++i) {
      const bool p = a[z].values[i] != 0, q = b[z].values[i] != 0;
      na += p;
      nb += q;
      both += p && q;
    }
  }
  return na + nb == 0 ? 1.0 : 2.0 * double(both) / double(na + nb);
}

VolumeResult segment_volume(const std::vector<Plane>& slices, const std::vector<std::optional<Point>>& clicks,
                            const Spacing3d& spacing, const SliceFn& segment, const std::vector<Mask>* truth) {
  if (slices.size() != clicks.size()) throw std::invalid_argument("one click entry per slice required");
  if (std::none_of(clicks.begin(), clicks.end(), [](const auto& c) { return c.has_value(); }))
    throw std::invalid_argument("segment_volume needs at least one slice with a click");
  VolumeResult v;
  int64_t voxels = 0;
  for (size_t z = 0; z < slices.size(); ++z) {
    Mask m(slices[z].height, slices[z].width);
    bool flagged = !clicks[z].has_value();
    if (clicks[z]) {
      try {
        Mask got = segment(slices[z], *clicks[z]);
        if (got.height != m.height || got.width != m.width) throw geom::GeometryError("slice mask has the wrong shape");
        m = std::move(got);
      } catch (const std::exception&) {
        flagged = true;
      }
    }
    voxels += m.count();
    v.masks.push_back(std::move(m));
    v.flagged.push_back(flagged);
  }
  v.volume_mm3 = double(voxels) * spacing.x * spacing.y * spacing.z;
  if (truth) v.dice = dice_3d(v.masks, *truth);
  return v;
}

SliceFn slice_segmenter(const Measurer& m, double spacing_mm_per_px) {
  return [&m, spacing_mm_per_px](const Plane& slice, Point click) {
    return m.measure(slice, click, spacing_mm_per_px).seg_mask;
  };
}

}  // namespace meaformer::pipeline
