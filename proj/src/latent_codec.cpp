#include "vsdsr/latent_codec.hpp"

#include <algorithm>
#include <cstdio>

#include "vsdsr/container.hpp"
#include "vsdsr/errors.hpp"
#include "vsdsr/hashing.hpp"

namespace vsdsr {

namespace {
const ConvSpec E1{3, 24, 3, 1, 1};
const ConvSpec E2{24, 48, 3, 2, 1};
const ConvSpec E3{48, 72, 3, 2, 1};
const ConvSpec E4{72, 4, 3, 1, 1};
const ConvSpec D1{4, 72, 3, 1, 1};
const ConvSpec D2{72, 48, 3, 1, 1};
const ConvSpec D3{48, 24, 3, 1, 1};
const ConvSpec D4{24, 3, 3, 1, 1};
} // namespace

CodecParams CodecParams::random_init(uint64_t seed) {
    RngStream rng(seed);
    CodecParams c;
    auto mk = [&](Tensor& w, Tensor& b, const ConvSpec& s) {
        w = Tensor({s.weight_rows(), s.weight_cols()});
        init_kaiming(w, s.weight_cols(), rng);
        b = Tensor::zeros({s.out_ch});
    };
    mk(c.e1w, c.e1b, E1);
    mk(c.e2w, c.e2b, E2);
    mk(c.e3w, c.e3b, E3);
    mk(c.e4w, c.e4b, E4);
    mk(c.d1w, c.d1b, D1);
    mk(c.d2w, c.d2b, D2);
    mk(c.d3w, c.d3b, D3);
    mk(c.d4w, c.d4b, D4);
    return c;
}

std::vector<Tensor*> CodecParams::params() {
    return {&e1w, &e1b, &e2w, &e2b, &e3w, &e3b, &e4w, &e4b,
            &d1w, &d1b, &d2w, &d2b, &d3w, &d3b, &d4w, &d4b};
}

std::vector<const Tensor*> CodecParams::params() const {
    auto* self = const_cast<CodecParams*>(this);
    std::vector<const Tensor*> out;
    for (Tensor* t : self->params()) out.push_back(t);
    return out;
}

int64_t CodecParams::n_params() const {
    int64_t n = 0;
    for (const Tensor* t : params()) n += t->numel();
    return n;
}

uint64_t CodecParams::weight_hash() const {
    uint64_t h = 0xC0DEC0DEC0DEC0DEULL;
    for (const Tensor* t : params()) h = hash_combine(h, hash_tensor(*t));
    return h;
}

void CodecParams::save(const std::filesystem::path& path) const {
    Container c;
    c.meta["kind"] = "latent_codec";
    c.meta["latent_channels"] = latent_channels;
    c.meta["epochs_trained"] = epochs_trained;
    c.meta["final_val_mse"] = final_val_mse;
    c.meta["weight_hash"] = hash_hex(weight_hash());
    const char* names[] = {"e1w", "e1b", "e2w", "e2b", "e3w", "e3b", "e4w", "e4b",
                           "d1w", "d1b", "d2w", "d2b", "d3w", "d3b", "d4w", "d4b"};
    auto ps = params();
    for (size_t i = 0; i < ps.size(); i++) c.tensors[names[i]] = *ps[i];
    c.save(path);
}

CodecParams CodecParams::load(const std::filesystem::path& path) {
    Container c = Container::load(path);
    if (c.meta.value("kind", "") != "latent_codec")
        throw IngestionError("not a codec file: " + path.string());
    CodecParams p;
    p.latent_channels = c.meta.at("latent_channels").get<int>();
    p.epochs_trained = c.meta.at("epochs_trained").get<int>();
    p.final_val_mse = c.meta.at("final_val_mse").get<real>();
    const char* names[] = {"e1w", "e1b", "e2w", "e2b", "e3w", "e3b", "e4w", "e4b",
                           "d1w", "d1b", "d2w", "d2b", "d3w", "d3b", "d4w", "d4b"};
    auto ps = p.params();
    for (size_t i = 0; i < ps.size(); i++) *ps[i] = c.at(names[i]);
    if (c.meta.value("weight_hash", "") != hash_hex(p.weight_hash()))
        throw IngestionError("codec weight hash mismatch in " + path.string());
    return p;
}

Tensor image_to_chw(const Image& img) {
    Tensor t({3, img.h, img.w});
    for (int c = 0; c < 3; c++)
        for (int y = 0; y < img.h; y++)
            for (int x = 0; x < img.w; x++)
                t[(static_cast<int64_t>(c) * img.h + y) * img.w + x] = img.at(y, x, c);
    return t;
}

Image chw_to_image(const Tensor& t) {
    if (t.ndim() != 3 || t.dim(0) != 3) throw ShapeError("chw_to_image: want [3,H,W]");
    Image img(static_cast<int>(t.dim(1)), static_cast<int>(t.dim(2)));
    for (int c = 0; c < 3; c++)
        for (int y = 0; y < img.h; y++)
            for (int x = 0; x < img.w; x++)
                img.at(y, x, c) = t[(static_cast<int64_t>(c) * img.h + y) * img.w + x];
    return img;
}

Image upsample_x4(const Image& img) {
    Image out = bilinear_upsample(img, 4);
    out.clamp01();
    return out;
}

namespace {
struct EncAct {
    Tensor x0, z1, a1, z2, a2, z3, a3, z4; // pre/post activations
};

EncAct encode_fwd(const Tensor& x, const CodecParams& c) {
    EncAct e;
    e.x0 = x;
    e.z1 = conv_forward(e.x0, c.e1w, c.e1b, E1);
    e.a1 = silu(e.z1);
    e.z2 = conv_forward(e.a1, c.e2w, c.e2b, E2);
    e.a2 = silu(e.z2);
    e.z3 = conv_forward(e.a2, c.e3w, c.e3b, E3);
    e.a3 = silu(e.z3);
    e.z4 = conv_forward(e.a3, c.e4w, c.e4b, E4);
    return e;
}

struct DecAct {
    Tensor z1, a1, u1, z2, a2, u2, z3, a3, z4, y;
};

DecAct decode_fwd(const Tensor& latent, const CodecParams& c) {
    DecAct d;
    d.z1 = conv_forward(latent, c.d1w, c.d1b, D1);
    d.a1 = silu(d.z1);
    d.u1 = nearest_up2(d.a1);
    d.z2 = conv_forward(d.u1, c.d2w, c.d2b, D2);
    d.a2 = silu(d.z2);
    d.u2 = nearest_up2(d.a2);
    d.z3 = conv_forward(d.u2, c.d3w, c.d3b, D3);
    d.a3 = silu(d.z3);
    d.z4 = conv_forward(d.a3, c.d4w, c.d4b, D4);
    d.y = sigmoid(d.z4);
    return d;
}
} // namespace

LatentImage encode(const Image& img, const CodecParams& codec,
                   std::vector<Tensor>* stage_features) {
    if (img.h % 4 != 0 || img.w % 4 != 0)
        throw ShapeError("encode: image dims must be divisible by 4");
    EncAct e = encode_fwd(image_to_chw(img), codec);
    if (stage_features) *stage_features = {e.a1, e.a2, e.a3};
    LatentImage lat;
    lat.data = e.z4;
    lat.scale = 4;
    return lat;
}

Image decode(const LatentImage& latent, const CodecParams& codec) {
    if (latent.channels() != codec.latent_channels)
        throw ShapeError("decode: latent channel mismatch");
    DecAct d = decode_fwd(latent.data, codec);
    return chw_to_image(d.y);
}

CodecParams train_codec(const std::vector<MultiViewDataset>& datasets, int epochs, uint64_t seed,
                        bool verbose) {
    std::vector<const Image*> all;
    for (const MultiViewDataset& ds : datasets)
        for (const Image& im : ds.hr_images) all.push_back(&im);
    // every 10th image is validation, so 10 is the floor that keeps the
    // early-stopping split non-empty
    if (all.size() < 10)
        throw ConfigError("train_codec needs >= 10 HR images, got " + std::to_string(all.size()));

    std::vector<const Image*> train, val;
    for (size_t i = 0; i < all.size(); i++)
        (i % 10 == 9 ? val : train).push_back(all[i]);

    CodecParams codec = CodecParams::random_init(mix_seed(seed, 1));
    Adam opt(codec.params());
    RngStream shuffle_rng = RngStream(seed).child(2);

    auto val_mse = [&]() {
        real acc = 0;
        for (const Image* im : val) {
            LatentImage lat = encode(*im, codec);
            Image rec = decode(lat, codec);
            acc += mse(rec, *im);
        }
        return acc / static_cast<real>(val.size());
    };

    real best = std::numeric_limits<real>::max();
    int bad_epochs = 0;
    for (int ep = 0; ep < epochs; ep++) {
        std::vector<size_t> order(train.size());
        for (size_t i = 0; i < order.size(); i++) order[i] = i;
        for (size_t i = order.size(); i > 1; i--)
            std::swap(order[i - 1], order[static_cast<size_t>(
                                        shuffle_rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);

        real train_acc = 0;
        for (size_t oi = 0; oi < order.size(); oi++) {
            const Image& im = *train[order[oi]];
            Tensor x = image_to_chw(im);
            EncAct e = encode_fwd(x, codec);
            DecAct d = decode_fwd(e.z4, codec);

            // L = mean (y - x)^2
            const int64_t n = d.y.numel();
            Tensor gy(d.y.shape());
            real loss = 0;
            for (int64_t i = 0; i < n; i++) {
                real diff = d.y[i] - x[i];
                loss += diff * diff / n;
                gy[i] = 2.0 * diff / n;
            }
            train_acc += loss;
            if (!std::isfinite(loss)) throw NumericalError("codec training loss is non-finite");

            CodecParams g; // gradient holder, same field layout
            Tensor gz4 = sigmoid_backward_from_y(d.y, gy);
            Tensor ga3;
            conv_backward(d.a3, codec.d4w, D4, gz4, &ga3, &g.d4w, &g.d4b);
            Tensor gz3 = silu_backward(d.z3, ga3);
            Tensor gu2;
            conv_backward(d.u2, codec.d3w, D3, gz3, &gu2, &g.d3w, &g.d3b);
            Tensor ga2 = nearest_up2_backward(gu2);
            Tensor gz2 = silu_backward(d.z2, ga2);
            Tensor gu1;
            conv_backward(d.u1, codec.d2w, D2, gz2, &gu1, &g.d2w, &g.d2b);
            Tensor ga1 = nearest_up2_backward(gu1);
            Tensor gz1 = silu_backward(d.z1, ga1);
            Tensor glat;
            conv_backward(e.z4, codec.d1w, D1, gz1, &glat, &g.d1w, &g.d1b);

            Tensor gea3;
            conv_backward(e.a3, codec.e4w, E4, glat, &gea3, &g.e4w, &g.e4b);
            Tensor gez3 = silu_backward(e.z3, gea3);
            Tensor gea2;
            conv_backward(e.a2, codec.e3w, E3, gez3, &gea2, &g.e3w, &g.e3b);
            Tensor gez2 = silu_backward(e.z2, gea2);
            Tensor gea1;
            conv_backward(e.a1, codec.e2w, E2, gez2, &gea1, &g.e2w, &g.e2b);
            Tensor gez1 = silu_backward(e.z1, gea1);
            conv_backward(e.x0, codec.e1w, E1, gez1, nullptr, &g.e1w, &g.e1b);

            std::vector<Tensor*> grads = g.params();
            opt.step(grads, 1e-3);
        }

        real vmse = val_mse();
        codec.epochs_trained = ep + 1;
        codec.final_val_mse = vmse;
        if (verbose)
            std::printf("codec epoch %3d  train %.6f  val %.6f\n", ep,
                        train_acc / static_cast<real>(train.size()), vmse);
        if (vmse < best) {
            best = vmse;
            bad_epochs = 0;
        } else if (++bad_epochs >= 3) {
            break; // early stop, not an error
        }
    }
    return codec;
}

} // namespace vsdsr
