"""Slideshow video assembly: pan/zoom motion over still scenes with
burned-in captions, encoded by an external encoder found on PATH, or
exported as a keyframe archive when no encoder is installed.

The animation tier is deliberately pan/zoom plus crossfade; per-object
motion inside a scene is out of scope for still-image sources.
"""

from __future__ import annotations

import io
import shutil
import subprocess
import textwrap
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from tempfile import TemporaryDirectory
from typing import Optional

from PIL import Image, ImageDraw, ImageFont, ImageOps

from .errors import EncoderError, EncoderMissingError, ValidationError
from .model import (
    FULL_FRAME,
    Rect,
    Storyboard,
    Transition,
    VideoManifest,
    VideoSegment,
)
from .store import Store, to_json

MANIFEST_FORMAT_VERSION = 1

# Fixed zip entry timestamp so fallback archives are byte-identical
# across runs (content addressing depends on it).
_ZIP_EPOCH = (2020, 1, 1, 0, 0, 0)


@dataclass
class TimingConfig:
    fps: int = 30
    resolution: tuple[int, int] = (1280, 720)
    segment_ms: int = 5_000
    per_scene_ms: dict[int, int] = field(default_factory=dict)
    crossfade_ms: int = 500
    zoom_end_scale: float = 0.85


def default_motion(zoom_end_scale: float = 0.85) -> tuple[Rect, Rect]:
    """Slow zoom-in: full frame to a centered crop of the given scale."""
    margin = (1.0 - zoom_end_scale) / 2.0
    return FULL_FRAME, Rect(margin, margin, zoom_end_scale, zoom_end_scale)


def build_manifest(storyboard: Storyboard, timing: TimingConfig | None = None) -> VideoManifest:
    """Ordered, timed segments from a fully-imaged storyboard."""
    timing = timing or TimingConfig()
    start_rect, end_rect = default_motion(timing.zoom_end_scale)
    segments = []
    last_index = max(s.index for s in storyboard.scenes)
    for scene in storyboard.scenes:
        if scene.image is None:
            raise ValidationError(f"scene {scene.index} has no image; render it first")
        duration = timing.per_scene_ms.get(scene.index, timing.segment_ms)
        is_last = scene.index == last_index
        segments.append(
            VideoSegment(
                scene_index=scene.index,
                image=scene.image,
                caption=scene.description,
                duration_ms=duration,
                motion_start=start_rect,
                motion_end=end_rect,
                transition_out=Transition.CUT if is_last else Transition.CROSSFADE,
                transition_ms=0 if is_last else timing.crossfade_ms,
            )
        )
    return VideoManifest(
        segments=segments, fps=timing.fps, resolution=timing.resolution
    )


def interpolate_motion(segment: VideoSegment, t: float) -> Rect:
    """Componentwise linear interpolation of the segment's crop rectangle."""
    if not 0.0 <= t <= 1.0:
        raise ValidationError(f"interpolation parameter t={t} outside [0, 1]")
    a, b = segment.motion_start, segment.motion_end
    return Rect(
        (1 - t) * a.x + t * b.x,
        (1 - t) * a.y + t * b.y,
        (1 - t) * a.w + t * b.w,
        (1 - t) * a.h + t * b.h,
    )


# ---------------------------------------------------------------------------
# Frame composition


def _load_font(size: int):
    try:
        return ImageFont.load_default(size=size)
    except TypeError:
        return ImageFont.load_default()


def compose_frame(
    image_bytes: bytes,
    rect: Rect,
    resolution: tuple[int, int],
    caption: str,
) -> Image.Image:
    """Crop the source at the motion rect, fit to the output resolution,
    and burn the caption into a high-contrast band in the bottom third."""
    width, height = resolution
    with Image.open(io.BytesIO(image_bytes)) as source:
        source = source.convert("RGB")
        src_w, src_h = source.size
        box = (
            round(rect.x * src_w),
            round(rect.y * src_h),
            round((rect.x + rect.w) * src_w),
            round((rect.y + rect.h) * src_h),
        )
        frame = ImageOps.fit(source.crop(box), (width, height))

    if caption:
        overlay = Image.new("RGBA", (width, height), (0, 0, 0, 0))
        draw = ImageDraw.Draw(overlay)
        band_top = height * 2 // 3
        draw.rectangle([0, band_top, width, height], fill=(0, 0, 0, 170))
        font_size = max(12, height // 24)
        font = _load_font(font_size)
        wrap_chars = max(20, int(width / (font_size * 0.55)))
        text = textwrap.fill(caption, width=wrap_chars)
        draw.multiline_text(
            (width // 2, band_top + (height - band_top) // 2),
            text,
            font=font,
            fill=(255, 255, 255, 255),
            anchor="mm",
            align="center",
            spacing=4,
        )
        frame = Image.alpha_composite(frame.convert("RGBA"), overlay).convert("RGB")
    return frame


def frame_at(manifest: VideoManifest, t_ms: int, store: Store) -> Image.Image:
    """Compose the frame for an absolute timeline position, including
    crossfade blending into the following segment."""
    segments = manifest.segments
    start = 0
    for position, segment in enumerate(segments):
        end = start + segment.duration_ms
        if t_ms < end or position == len(segments) - 1:
            local = min(t_ms - start, segment.duration_ms)
            fraction = local / segment.duration_ms
            frame = compose_frame(
                store.get_blob(segment.image),
                interpolate_motion(segment, min(max(fraction, 0.0), 1.0)),
                manifest.resolution,
                segment.caption,
            )
            fade_span = segment.transition_ms
            if (
                segment.transition_out == Transition.CROSSFADE
                and fade_span > 0
                and position + 1 < len(segments)
                and local >= segment.duration_ms - fade_span
            ):
                following = segments[position + 1]
                fade_progress = (local - (segment.duration_ms - fade_span)) / fade_span
                incoming = compose_frame(
                    store.get_blob(following.image),
                    interpolate_motion(following, 0.0),
                    manifest.resolution,
                    following.caption,
                )
                frame = Image.blend(frame, incoming, fade_progress)
            return frame
        start = end
    raise ValidationError(f"timeline position {t_ms} ms beyond manifest end")


# ---------------------------------------------------------------------------
# Rendering


def find_encoder(encoder: str = "ffmpeg") -> Optional[str]:
    return shutil.which(encoder)


def encoder_args(
    encoder_path: str, fps: int, frames_pattern: str, out_path: str
) -> list[str]:
    """Encoder invocation derived from the manifest settings: a widely
    playable H.264 baseline in an mp4 container."""
    return [
        encoder_path,
        "-y",
        "-framerate",
        str(fps),
        "-i",
        frames_pattern,
        "-c:v",
        "libx264",
        "-pix_fmt",
        "yuv420p",
        "-movflags",
        "+faststart",
        out_path,
    ]


def keyframe_times_ms(segment: VideoSegment) -> list[int]:
    """One keyframe per whole second of the segment."""
    return [k * 1000 for k in range(max(1, segment.duration_ms // 1000))]


def render(
    manifest: VideoManifest,
    store: Store,
    *,
    encoder: str = "ffmpeg",
    fallback_enabled: bool = True,
):
    """Render the manifest to a stored video blob, or to a keyframe
    archive when no encoder is available and the fallback is enabled."""
    if not manifest.segments:
        raise ValidationError("manifest has no segments")
    encoder_path = find_encoder(encoder)
    if encoder_path is not None:
        return _render_with_encoder(manifest, store, encoder_path)
    if fallback_enabled:
        return _render_fallback_archive(manifest, store)
    raise EncoderMissingError(
        f"encoder '{encoder}' not found on PATH and the archive fallback is disabled"
    )


def _render_with_encoder(manifest: VideoManifest, store: Store, encoder_path: str):
    total_frames = round(manifest.total_duration_ms / 1000 * manifest.fps)
    with TemporaryDirectory(prefix="analogykit-render-") as tmp:
        frames_dir = Path(tmp) / "frames"
        frames_dir.mkdir()
        for n in range(total_frames):
            t_ms = min(
                int(round(n * 1000 / manifest.fps)), manifest.total_duration_ms - 1
            )
            frame_at(manifest, t_ms, store).save(frames_dir / f"{n:06d}.png")
        out_path = Path(tmp) / "out.mp4"
        args = encoder_args(
            encoder_path, manifest.fps, str(frames_dir / "%06d.png"), str(out_path)
        )
        result = subprocess.run(args, capture_output=True, text=True)
        if result.returncode != 0:
            raise EncoderError(
                f"encoder exited with status {result.returncode}", stderr=result.stderr
            )
        return store.put_blob(out_path.read_bytes(), "video/mp4")


def _render_fallback_archive(manifest: VideoManifest, store: Store):
    """Zip of motion-applied keyframes (one per second per segment) plus
    the manifest document."""
    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, "w", compression=zipfile.ZIP_DEFLATED) as archive:
        manifest_doc = dict(manifest.to_doc())
        manifest_doc["format_version"] = MANIFEST_FORMAT_VERSION
        _write_fixed(archive, "manifest.json", to_json(manifest_doc).encode("utf-8"))
        for segment in manifest.segments:
            for t_ms in keyframe_times_ms(segment):
                frame = compose_frame(
                    store.get_blob(segment.image),
                    interpolate_motion(segment, t_ms / segment.duration_ms),
                    manifest.resolution,
                    segment.caption,
                )
                frame_buffer = io.BytesIO()
                frame.save(frame_buffer, format="PNG")
                name = f"keyframes/scene{segment.scene_index}_t{t_ms:05d}ms.png"
                _write_fixed(archive, name, frame_buffer.getvalue())
    return store.put_blob(buffer.getvalue(), "application/zip")


def _write_fixed(archive: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    archive.writestr(info, data)
