/** Pluggable promptable-model interface plus the echo reference model. */
import { PromptPoint } from "./protocol";

export interface RegisteredImage {
  width: number;
  height: number;
  pixels: Float32Array; // row-major intensities
}

export interface PromptModel {
  readonly name: string;
  /**
   * Produce a per-pixel foreground probability grid in [0, 1].
   * `stochastic` requests use the model's own noise seeded by `memberSeed`;
   * deterministic models may ignore both.
   */
  predict(
    image: RegisteredImage,
    prompts: PromptPoint[],
    stochastic: boolean,
    memberSeed: number
  ): Float32Array;
}

/**
 * The conformance reference: probabilities are the image intensities
 * clamped to [0, 1], prompts ignored. Deterministic by construction.
 */
export class EchoThresholdModel implements PromptModel {
  readonly name = "echo-thresholder";

  predict(image: RegisteredImage): Float32Array {
    const out = new Float32Array(image.pixels.length);
    for (let i = 0; i < out.length; i++) {
      out[i] = Math.min(Math.max(image.pixels[i], 0), 1);
    }
    return out;
  }
}

const registry: Record<string, () => PromptModel> = {
  echo: () => new EchoThresholdModel(),
};

export function createModel(name: string): PromptModel {
  const factory = registry[name];
  if (!factory) {
    throw new Error(`unknown model ${name}; available: ${Object.keys(registry).join(", ")}`);
  }
  return factory();
}
