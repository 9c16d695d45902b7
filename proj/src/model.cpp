#include "cope/model.hpp"

#include "cope/errors.hpp"

namespace cope {

void ModelConfig::validate() const {
  visual.validate();
  text.validate();
  if (visual.embed_dim != text.embed_dim) throw ConfigError("visual and text embed_dim must match");
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (classifier_hidden < 0) throw ConfigError("classifier_hidden must be >= 0");
}

CopeModel::CopeModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg.init_seed);
  const int d = cfg.embed_dim();
  visual_ = VisualEncoder(params_, cfg.visual, rng);
  text_ = TextEncoder(params_, cfg.text, rng);
  projections_ = ProjectionSet(params_, d, rng);
  fusion_ = FusionHead(params_, d, cfg.visual.heads, rng);
  classifier_ = ClassifierHead(params_, d, cfg.classifier_hidden > 0 ? cfg.classifier_hidden : d, cfg.num_classes, rng);
}

void CopeModel::check_compatible(const Sample& s) const {
  const auto& v = cfg_.visual;
  if (s.frames.height != v.image_size || s.frames.width != v.image_size) {
    throw CompatibilityError(s.sample_id + ": frame size " + std::to_string(s.frames.height) + "x" +
                             std::to_string(s.frames.width) + " does not match model image size " +
                             std::to_string(v.image_size));
  }
  if (s.frames.frames > v.max_frames) {
    throw CompatibilityError(s.sample_id + ": " + std::to_string(s.frames.frames) + " frames exceed model capacity " +
                             std::to_string(v.max_frames));
  }
  if (s.text_tokens) {
    if (s.text_tokens->size() > cfg_.text.max_len) {
      throw CompatibilityError(s.sample_id + ": text longer than model max_len");
    }
    for (auto tok : *s.text_tokens) {
      if (tok < 0 || static_cast<std::uint32_t>(tok) >= cfg_.text.vocab_size) {
        throw CompatibilityError(s.sample_id + ": token " + std::to_string(tok) + " outside model vocabulary");
      }
    }
  }
}

Vector CopeModel::represent(const Sample& sample) const {
  const Vector z = visual_.encode(params_, sample.frames);
  const Vector e_vis = projections_.project(params_, z, sample.domain, Modality::vision);
  if (sample.domain != Domain::P) return e_vis;
  if (!sample.text_tokens) throw ContractError(sample.sample_id + ": product page without text tokens");
  const Vector h = text_.encode(params_, *sample.text_tokens);
  const Vector e_txt = projections_.project(params_, h, Domain::P, Modality::text);
  return fusion_.fuse(params_, e_vis, e_txt);
}

TripleRepresentations CopeModel::forward_triple(const Sample& page, const Sample& video, const Sample& live,
                                                TripleCache& c) const {
  if (page.domain != Domain::P || video.domain != Domain::V || live.domain != Domain::L) {
    throw ContractError("triple must be ordered (P, V, L)");
  }
  if (!page.text_tokens) throw ContractError(page.sample_id + ": product page without text tokens");
  TripleRepresentations r;
  c.z_page = visual_.forward(params_, page.frames, c.page_visual);
  c.h_text = text_.forward(params_, *page.text_tokens, c.page_text);
  c.z_video = visual_.forward(params_, video.frames, c.video_visual);
  c.z_live = visual_.forward(params_, live.frames, c.live_visual);
  r.vis_p = projections_.project(params_, c.z_page, Domain::P, Modality::vision);
  r.txt_p = projections_.project(params_, c.h_text, Domain::P, Modality::text);
  r.vis_v = projections_.project(params_, c.z_video, Domain::V, Modality::vision);
  r.vis_l = projections_.project(params_, c.z_live, Domain::L, Modality::vision);
  r.fus_p = fusion_.forward(params_, r.vis_p, r.txt_p, c.fusion);
  r.scores_p = classifier_.forward(params_, r.fus_p, c.cls_p);
  r.scores_v = classifier_.forward(params_, r.vis_v, c.cls_v);
  r.scores_l = classifier_.forward(params_, r.vis_l, c.cls_l);
  return r;
}

void CopeModel::backward_triple(const TripleCache& c, const TripleRepresentations&, const TripleGradients& d,
                                nn::GradientSet& g) const {
  const Vector dfus = d.fus_p + classifier_.backward(params_, c.cls_p, d.scores_p, g);
  const Vector dvis_v = d.vis_v + classifier_.backward(params_, c.cls_v, d.scores_v, g);
  const Vector dvis_l = d.vis_l + classifier_.backward(params_, c.cls_l, d.scores_l, g);
  auto [dfus_vis, dfus_txt] = fusion_.backward(params_, c.fusion, dfus, g);
  const Vector dvis_p = d.vis_p + dfus_vis;
  const Vector dtxt_p = d.txt_p + dfus_txt;

  const Vector dz_page = projections_.backward(params_, c.z_page, dvis_p, Domain::P, Modality::vision, g);
  const Vector dh_text = projections_.backward(params_, c.h_text, dtxt_p, Domain::P, Modality::text, g);
  const Vector dz_video = projections_.backward(params_, c.z_video, dvis_v, Domain::V, Modality::vision, g);
  const Vector dz_live = projections_.backward(params_, c.z_live, dvis_l, Domain::L, Modality::vision, g);

  visual_.backward(params_, c.page_visual, dz_page, g);
  text_.backward(params_, c.page_text, dh_text, g);
  visual_.backward(params_, c.video_visual, dz_video, g);
  visual_.backward(params_, c.live_visual, dz_live, g);
}

}  // namespace cope
