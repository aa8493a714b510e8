#pragma once

#include <string>
#include <vector>

#include "prime/corpus.hpp"
#include "prime/encoder.hpp"
#include "prime/prototype_net.hpp"

namespace prime {

/// Everything needed for inference: encoder, prototype network, centroid
/// store and free-vector bank.
struct Model {
    EncoderParams encoder;
    PrototypeNetParams proto;
    CentroidStore centroids;
    FreeVectorBank bank;

    std::size_t dim() const noexcept { return encoder.dim(); }
    std::size_t num_labels() const noexcept { return centroids.centroids.rows; }

    /// Trainable tensors in a fixed order: encoder, prototype network, bank.
    std::vector<TensorRef> trainable();
    /// Zero-filled gradient buffers shaped like the trainable tensors.
    Model zeros_like() const;
};

Matrix embed_texts(const EncoderParams& encoder, const std::vector<TextRecord>& records,
                   unsigned threads = 1);

/// Eval-mode prototypes for every corpus label.
Matrix materialize_all_prototypes(const Model& model, const Corpus& corpus, unsigned threads = 1);

/// Little-endian binary checkpoint: `PRIM` header (version, d, V, t_max), the
/// encoder matrices as row-major f32, then PNET / CENT / BANK / ASGN segments.
std::string serialize_checkpoint(const Model& model);
Model deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace prime
