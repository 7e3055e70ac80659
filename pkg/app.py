import json
import tempfile
from pathlib import Path

import pandas as pd
import streamlit as st

from gshell import formats
from gshell.analysis import boundary_loops, manifold_report
from gshell.errors import GShellError
from gshell.extract import extract
from gshell.grid import SHAPES, shape_grid

# -------------------------
# PAGE CONFIG
# -------------------------
st.set_page_config(
    page_title="Open-Surface Mesh Inspector",
    layout="wide"
)

st.title("🧵 Open-Surface Mesh Inspector")

st.caption(
    "Load a grid (SDF + mSDF) or generate one from an analytic shape, extract a watertight "
    "or open mesh, and inspect its topology. The mesh can be downloaded as OBJ."
)

# -------------------------
# UI LABEL MAPPING
# -------------------------
MODE_LABELS = {
    "gshell": "Open surface (SDF + mSDF)",
    "watertight": "Watertight (SDF only)"
}

REPORT_LABELS = {
    "vertices": "Vertices",
    "edges": "Edges",
    "faces": "Faces",
    "euler_characteristic": "Euler characteristic",
    "boundary_edge_count": "Boundary edges",
    "boundary_loops": "Boundary loops",
    "components": "Connected components",
    "isolated_vertices": "Isolated vertices",
    "degenerate_faces": "Degenerate faces",
    "total_area": "Surface area",
    "is_closed": "Closed",
    "is_manifold": "Manifold"
}

# -------------------------
# GRID SOURCE
# -------------------------
source = st.radio("Grid source", ["Upload grid JSON", "Analytic shape"], horizontal=True)

grid = None
if source == "Upload grid JSON":
    uploaded_file = st.file_uploader("Upload a grid (.json)", type=["json"])
    if uploaded_file:
        with tempfile.NamedTemporaryFile(delete=False, suffix=".json") as tmp:
            tmp.write(uploaded_file.read())
            temp_path = Path(tmp.name)
        try:
            grid = formats.read_grid(temp_path)
        except GShellError as exc:
            st.error(f"Could not read grid: {exc}")
        finally:
            temp_path.unlink(missing_ok=True)
else:
    col1, col2 = st.columns(2)
    shape = col1.selectbox("Shape", sorted(SHAPES))
    resolution = col2.slider("Cells per axis", min_value=4, max_value=48, value=16, step=2)
    grid = shape_grid(shape, resolution)

mode = st.selectbox("Extraction mode", list(MODE_LABELS), format_func=MODE_LABELS.get)

# -------------------------
# RUN EXTRACTION
# -------------------------
if grid is not None and st.button("▶️ Extract mesh"):
    with st.spinner("Extracting..."):
        try:
            mesh = extract(grid, mode)
        except GShellError as exc:
            st.error(str(exc))
            st.stop()
        report = manifold_report(mesh)

    if mesh.is_empty:
        st.warning("The extracted mesh is empty (no SDF sign change, or every face discarded by the mSDF).")
    else:
        st.success(f"✅ {len(mesh.faces)} faces, {len(mesh.vertices)} vertices")

    # -------------------------
    # REPORT
    # -------------------------
    st.subheader("📋 Topology")
    rows = [{"Check": label, "Value": str(report[key])} for key, label in REPORT_LABELS.items()]
    st.table(pd.DataFrame(rows))

    if report["non_manifold_edges"] or report["non_manifold_vertices"]:
        st.warning(
            f"{len(report['non_manifold_edges'])} non-manifold edges, "
            f"{len(report['non_manifold_vertices'])} non-manifold vertices"
        )
    if report["boundary_loop_lengths"]:
        st.markdown("**Boundary loop lengths:** " + ", ".join(str(n) for n in report["boundary_loop_lengths"]))

    # -------------------------
    # DOWNLOAD
    # -------------------------
    with tempfile.TemporaryDirectory() as tmp_dir:
        obj_path = formats.write_obj(mesh, Path(tmp_dir) / "mesh.obj")
        obj_bytes = obj_path.read_bytes()
    st.download_button(
        "⬇️ Download mesh (OBJ)",
        data=obj_bytes,
        file_name=f"gshell_{mode}.obj",
        mime="text/plain"
    )
    st.download_button(
        "⬇️ Download boundary (JSON)",
        data=json.dumps(formats.boundary_document(mesh, boundary_loops(mesh.faces)), indent=2),
        file_name="boundary.json",
        mime="application/json"
    )
