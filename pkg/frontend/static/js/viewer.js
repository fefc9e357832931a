// Minimal WebGL mesh viewer: orbit camera, per-vertex colors, screen-space
// vertex picking, and a marker for the dragged control point. Geometry is
// whatever the service sent; only shading normals are derived locally.
const VERT = `
attribute vec3 aPos;
attribute vec3 aNormal;
attribute vec3 aColor;
uniform mat4 uMvp;
uniform mat4 uModel;
varying vec3 vColor;
varying vec3 vNormal;
void main() {
  gl_Position = uMvp * vec4(aPos, 1.0);
  vColor = aColor;
  vNormal = mat3(uModel) * aNormal;
  gl_PointSize = 9.0;
}
`;
const FRAG = `
precision mediump float;
varying vec3 vColor;
varying vec3 vNormal;
uniform float uFlat;
void main() {
  vec3 n = normalize(vNormal);
  float light = uFlat > 0.5 ? 1.0 : 0.45 + 0.55 * abs(n.z);
  gl_FragColor = vec4(vColor * light, 1.0);
}
`;
function compile(gl, type, src) {
    const shader = gl.createShader(type);
    gl.shaderSource(shader, src);
    gl.compileShader(shader);
    if (!gl.getShaderParameter(shader, gl.COMPILE_STATUS)) {
        throw new Error(gl.getShaderInfoLog(shader) ?? "shader compile failed");
    }
    return shader;
}
export function vertexNormals(positions, faces) {
    const normals = new Float32Array(positions.length);
    for (let f = 0; f < faces.length; f += 3) {
        const [a, b, c] = [faces[f], faces[f + 1], faces[f + 2]];
        const ax = positions[3 * a], ay = positions[3 * a + 1], az = positions[3 * a + 2];
        const ux = positions[3 * b] - ax, uy = positions[3 * b + 1] - ay, uz = positions[3 * b + 2] - az;
        const vx = positions[3 * c] - ax, vy = positions[3 * c + 1] - ay, vz = positions[3 * c + 2] - az;
        const nx = uy * vz - uz * vy, ny = uz * vx - ux * vz, nz = ux * vy - uy * vx;
        for (const idx of [a, b, c]) {
            normals[3 * idx] += nx;
            normals[3 * idx + 1] += ny;
            normals[3 * idx + 2] += nz;
        }
    }
    for (let i = 0; i < normals.length; i += 3) {
        const len = Math.hypot(normals[i], normals[i + 1], normals[i + 2]) || 1;
        normals[i] /= len;
        normals[i + 1] /= len;
        normals[i + 2] /= len;
    }
    return normals;
}
function mat4Identity() {
    const m = new Float32Array(16);
    m[0] = m[5] = m[10] = m[15] = 1;
    return m;
}
function mat4Mul(a, b) {
    const out = new Float32Array(16);
    for (let r = 0; r < 4; r++) {
        for (let c = 0; c < 4; c++) {
            let s = 0;
            for (let k = 0; k < 4; k++)
                s += a[k * 4 + r] * b[c * 4 + k];
            out[c * 4 + r] = s;
        }
    }
    return out;
}
function perspective(fovY, aspect, near, far) {
    const f = 1 / Math.tan(fovY / 2);
    const m = new Float32Array(16);
    m[0] = f / aspect;
    m[5] = f;
    m[10] = (far + near) / (near - far);
    m[11] = -1;
    m[14] = (2 * far * near) / (near - far);
    return m;
}
export class Viewer {
    constructor(canvas) {
        this.canvas = canvas;
        this.indexCount = 0;
        this.mesh = null;
        this.yaw = 0.6;
        this.pitch = 0.3;
        this.distance = 3.0;
        this.center = [0, 0, 0];
        this.marker = null;
        const gl = canvas.getContext("webgl");
        if (!gl)
            throw new Error("WebGL unavailable");
        this.gl = gl;
        const program = gl.createProgram();
        gl.attachShader(program, compile(gl, gl.VERTEX_SHADER, VERT));
        gl.attachShader(program, compile(gl, gl.FRAGMENT_SHADER, FRAG));
        gl.linkProgram(program);
        if (!gl.getProgramParameter(program, gl.LINK_STATUS)) {
            throw new Error(gl.getProgramInfoLog(program) ?? "link failed");
        }
        this.program = program;
        this.posBuf = gl.createBuffer();
        this.nrmBuf = gl.createBuffer();
        this.colBuf = gl.createBuffer();
        this.idxBuf = gl.createBuffer();
        this.markerBuf = gl.createBuffer();
        gl.enable(gl.DEPTH_TEST);
        gl.clearColor(0.12, 0.12, 0.14, 1.0);
    }
    setMesh(mesh) {
        const gl = this.gl;
        this.mesh = mesh;
        gl.bindBuffer(gl.ARRAY_BUFFER, this.posBuf);
        gl.bufferData(gl.ARRAY_BUFFER, mesh.positions, gl.DYNAMIC_DRAW);
        gl.bindBuffer(gl.ARRAY_BUFFER, this.nrmBuf);
        gl.bufferData(gl.ARRAY_BUFFER, vertexNormals(mesh.positions, mesh.faces), gl.DYNAMIC_DRAW);
        gl.bindBuffer(gl.ARRAY_BUFFER, this.colBuf);
        gl.bufferData(gl.ARRAY_BUFFER, mesh.colors, gl.DYNAMIC_DRAW);
        gl.bindBuffer(gl.ELEMENT_ARRAY_BUFFER, this.idxBuf);
        gl.bufferData(gl.ELEMENT_ARRAY_BUFFER, new Uint16Array(mesh.faces), gl.STATIC_DRAW);
        this.indexCount = mesh.faces.length;
        if (this.center[0] === 0 && this.center[1] === 0 && this.center[2] === 0) {
            this.fitView();
        }
        this.draw();
    }
    fitView() {
        if (!this.mesh)
            return;
        const p = this.mesh.positions;
        let [sx, sy, sz] = [0, 0, 0];
        const n = p.length / 3;
        for (let i = 0; i < n; i++) {
            sx += p[3 * i];
            sy += p[3 * i + 1];
            sz += p[3 * i + 2];
        }
        this.center = [sx / n, sy / n, sz / n];
        let radius = 0;
        for (let i = 0; i < n; i++) {
            const d = Math.hypot(p[3 * i] - this.center[0], p[3 * i + 1] - this.center[1], p[3 * i + 2] - this.center[2]);
            radius = Math.max(radius, d);
        }
        this.distance = radius * 2.6 || 3;
    }
    viewProjection() {
        const aspect = this.canvas.width / Math.max(1, this.canvas.height);
        const proj = perspective(0.9, aspect, 0.01, 100);
        const cy = Math.cos(this.yaw), sy = Math.sin(this.yaw);
        const cp = Math.cos(this.pitch), sp = Math.sin(this.pitch);
        // model = rotate around center, then translate back by distance
        const rotY = mat4Identity();
        rotY[0] = cy;
        rotY[2] = sy;
        rotY[8] = -sy;
        rotY[10] = cy;
        const rotX = mat4Identity();
        rotX[5] = cp;
        rotX[6] = sp;
        rotX[9] = -sp;
        rotX[10] = cp;
        const shift = mat4Identity();
        shift[12] = -this.center[0];
        shift[13] = -this.center[1];
        shift[14] = -this.center[2];
        const model = mat4Mul(rotX, mat4Mul(rotY, shift));
        const eye = mat4Identity();
        eye[14] = -this.distance;
        const mvp = mat4Mul(proj, mat4Mul(eye, model));
        return { mvp, model };
    }
    /** Screen coordinates (pixels) of every vertex, for picking. */
    projectAll() {
        if (!this.mesh)
            return new Float32Array(0);
        const { mvp } = this.viewProjection();
        const p = this.mesh.positions;
        const n = p.length / 3;
        const out = new Float32Array(n * 2);
        for (let i = 0; i < n; i++) {
            const x = p[3 * i], y = p[3 * i + 1], z = p[3 * i + 2];
            const cx = mvp[0] * x + mvp[4] * y + mvp[8] * z + mvp[12];
            const cyy = mvp[1] * x + mvp[5] * y + mvp[9] * z + mvp[13];
            const cw = mvp[3] * x + mvp[7] * y + mvp[11] * z + mvp[15];
            out[2 * i] = ((cx / cw) * 0.5 + 0.5) * this.canvas.width;
            out[2 * i + 1] = (0.5 - (cyy / cw) * 0.5) * this.canvas.height;
        }
        return out;
    }
    pickVertex(px, py, radius = 14) {
        const screen = this.projectAll();
        let best = -1;
        let bestDist = radius * radius;
        for (let i = 0; i < screen.length / 2; i++) {
            const dx = screen[2 * i] - px;
            const dy = screen[2 * i + 1] - py;
            const d = dx * dx + dy * dy;
            if (d < bestDist) {
                bestDist = d;
                best = i;
            }
        }
        return best >= 0 ? best : null;
    }
    /** Drag plane: move the picked vertex parallel to the screen. */
    dragTarget(start, dxPx, dyPx) {
        const scale = this.distance / this.canvas.height * 1.8;
        const cy = Math.cos(this.yaw), sy = Math.sin(this.yaw);
        const cp = Math.cos(this.pitch), sp = Math.sin(this.pitch);
        // camera right/up axes in world space (inverse of the model rotation)
        const right = [cy, 0, -sy];
        const up = [sy * sp, cp, cy * sp];
        return [
            start[0] + (right[0] * dxPx - up[0] * dyPx) * scale,
            start[1] + (right[1] * dxPx - up[1] * dyPx) * scale,
            start[2] + (right[2] * dxPx - up[2] * dyPx) * scale,
        ];
    }
    draw() {
        const gl = this.gl;
        const { mvp, model } = this.viewProjection();
        gl.viewport(0, 0, this.canvas.width, this.canvas.height);
        gl.clear(gl.COLOR_BUFFER_BIT | gl.DEPTH_BUFFER_BIT);
        if (!this.mesh)
            return;
        gl.useProgram(this.program);
        gl.uniformMatrix4fv(gl.getUniformLocation(this.program, "uMvp"), false, mvp);
        gl.uniformMatrix4fv(gl.getUniformLocation(this.program, "uModel"), false, model);
        gl.uniform1f(gl.getUniformLocation(this.program, "uFlat"), 0);
        const bind = (buf, name) => {
            const loc = gl.getAttribLocation(this.program, name);
            gl.bindBuffer(gl.ARRAY_BUFFER, buf);
            gl.enableVertexAttribArray(loc);
            gl.vertexAttribPointer(loc, 3, gl.FLOAT, false, 0, 0);
        };
        bind(this.posBuf, "aPos");
        bind(this.nrmBuf, "aNormal");
        bind(this.colBuf, "aColor");
        gl.bindBuffer(gl.ELEMENT_ARRAY_BUFFER, this.idxBuf);
        gl.drawElements(gl.TRIANGLES, this.indexCount, gl.UNSIGNED_SHORT, 0);
        if (this.marker) {
            gl.uniform1f(gl.getUniformLocation(this.program, "uFlat"), 1);
            gl.bindBuffer(gl.ARRAY_BUFFER, this.markerBuf);
            gl.bufferData(gl.ARRAY_BUFFER, new Float32Array(this.marker), gl.DYNAMIC_DRAW);
            const posLoc = gl.getAttribLocation(this.program, "aPos");
            gl.vertexAttribPointer(posLoc, 3, gl.FLOAT, false, 0, 0);
            const colLoc = gl.getAttribLocation(this.program, "aColor");
            gl.disableVertexAttribArray(colLoc);
            gl.vertexAttrib3f(colLoc, 0.1, 0.9, 0.2);
            const nrmLoc = gl.getAttribLocation(this.program, "aNormal");
            gl.disableVertexAttribArray(nrmLoc);
            gl.vertexAttrib3f(nrmLoc, 0, 0, 1);
            gl.drawArrays(gl.POINTS, 0, 1);
            gl.enableVertexAttribArray(colLoc);
            gl.enableVertexAttribArray(nrmLoc);
        }
    }
}
